/**
 * Rolling metric series and the strip-chart renderer.
 *
 * Chart values come verbatim from MetricsPackets; nothing is recomputed
 * client-side beyond windowing and the median readout. Series keep the last
 * 12 seconds of samples.
 */

export const WINDOW_SECONDS = 12;

export interface Sample {
  t: number;
  value: number;
}

export class RollingSeries {
  readonly windowSeconds: number;
  private samples: Sample[] = [];

  constructor(windowSeconds: number = WINDOW_SECONDS) {
    this.windowSeconds = windowSeconds;
  }

  push(t: number, value: number): void {
    this.samples.push({ t, value });
    const cutoff = t - this.windowSeconds;
    let drop = 0;
    while (drop < this.samples.length && this.samples[drop].t < cutoff) {
      drop += 1;
    }
    if (drop > 0) {
      this.samples.splice(0, drop);
    }
  }

  values(): readonly Sample[] {
    return this.samples;
  }

  latest(): Sample | null {
    return this.samples.length ? this.samples[this.samples.length - 1] : null;
  }

  median(): number | null {
    if (!this.samples.length) {
      return null;
    }
    const sorted = this.samples.map((s) => s.value).sort((a, b) => a - b);
    return sorted[Math.max(1, Math.ceil(sorted.length / 2)) - 1];
  }

  max(): number {
    return this.samples.reduce((m, s) => Math.max(m, s.value), 0);
  }
}

export interface StripChartStyle {
  stroke: string;
  fill: string;
  label: string;
  unit: string;
}

/** Draw one series as a filled strip chart with a median readout. */
export function drawStripChart(
  ctx: CanvasRenderingContext2D,
  series: RollingSeries,
  now: number,
  style: StripChartStyle,
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = '#14161a';
  ctx.fillRect(0, 0, width, height);

  const samples = series.values();
  const span = series.windowSeconds;
  const top = Math.max(series.max() * 1.15, 1e-9);
  if (samples.length > 1) {
    ctx.beginPath();
    ctx.moveTo(0, height);
    for (const s of samples) {
      const px = ((s.t - (now - span)) / span) * width;
      const py = height - (s.value / top) * (height - 14);
      ctx.lineTo(px, py);
    }
    ctx.lineTo(((samples[samples.length - 1].t - (now - span)) / span) * width, height);
    ctx.closePath();
    ctx.fillStyle = style.fill;
    ctx.fill();
    ctx.beginPath();
    for (let i = 0; i < samples.length; i++) {
      const s = samples[i];
      const px = ((s.t - (now - span)) / span) * width;
      const py = height - (s.value / top) * (height - 14);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    }
    ctx.strokeStyle = style.stroke;
    ctx.lineWidth = 1.5;
    ctx.stroke();
  }

  const median = series.median();
  ctx.fillStyle = '#c8cdd5';
  ctx.font = '12px system-ui, sans-serif';
  const readout = median === null ? 'no data' : `${median.toFixed(2)} ${style.unit}`;
  ctx.fillText(`${style.label}  median ${readout}`, 6, 12);
}
