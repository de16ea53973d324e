// Minimal canvas time-series chart. A straight polyline redraw handles 10k
// points at 1 Hz comfortably, so no charting dependency is needed.

import type { SeriesSample } from './state.js';

export interface ChartOptions {
  width: number;
  height: number;
  lineColor?: string;
  thresholds?: { low: number; high: number } | null;
  unit?: string;
}

interface Extent {
  min: number;
  max: number;
}

export function valueExtent(samples: SeriesSample[], thresholds?: { low: number; high: number } | null): Extent {
  let min = Infinity;
  let max = -Infinity;
  for (const s of samples) {
    if (s.v < min) min = s.v;
    if (s.v > max) max = s.v;
  }
  if (thresholds) {
    min = Math.min(min, thresholds.low);
    max = Math.max(max, thresholds.high);
  }
  if (!Number.isFinite(min) || !Number.isFinite(max)) return { min: 0, max: 1 };
  if (min === max) return { min: min - 0.5, max: max + 0.5 };
  const pad = (max - min) * 0.08;
  return { min: min - pad, max: max + pad };
}

export class LineChart {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly options: ChartOptions,
  ) {
    canvas.width = options.width;
    canvas.height = options.height;
    const ctx = canvas.getContext('2d');
    if (!ctx) throw new Error('canvas 2d context unavailable');
    this.ctx = ctx;
  }

  draw(samples: SeriesSample[]): void {
    const { ctx } = this;
    const { width, height } = this.options;
    const left = 46;
    const bottom = height - 18;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = '#fafafa';
    ctx.fillRect(0, 0, width, height);
    if (samples.length === 0) {
      ctx.fillStyle = '#888';
      ctx.fillText('no data in window', width / 2 - 40, height / 2);
      return;
    }
    const extent = valueExtent(samples, this.options.thresholds);
    const t0 = samples[0].t;
    const t1 = samples[samples.length - 1].t || t0 + 1;
    const x = (t: number) => left + ((t - t0) / Math.max(t1 - t0, 1)) * (width - left - 8);
    const y = (v: number) => bottom - ((v - extent.min) / (extent.max - extent.min)) * (bottom - 10);

    ctx.strokeStyle = '#ddd';
    ctx.beginPath();
    ctx.moveTo(left, 10);
    ctx.lineTo(left, bottom);
    ctx.lineTo(width - 8, bottom);
    ctx.stroke();

    if (this.options.thresholds) {
      ctx.strokeStyle = '#d08080';
      ctx.setLineDash([5, 4]);
      for (const bound of [this.options.thresholds.low, this.options.thresholds.high]) {
        ctx.beginPath();
        ctx.moveTo(left, y(bound));
        ctx.lineTo(width - 8, y(bound));
        ctx.stroke();
      }
      ctx.setLineDash([]);
    }

    ctx.strokeStyle = this.options.lineColor ?? '#2266aa';
    ctx.lineWidth = 1.4;
    ctx.beginPath();
    samples.forEach((s, i) => {
      if (i === 0) ctx.moveTo(x(s.t), y(s.v));
      else ctx.lineTo(x(s.t), y(s.v));
    });
    ctx.stroke();

    ctx.fillStyle = '#555';
    ctx.font = '11px sans-serif';
    const unit = this.options.unit ?? '';
    ctx.fillText(`${extent.max.toFixed(1)}${unit}`, 2, 14);
    ctx.fillText(`${extent.min.toFixed(1)}${unit}`, 2, bottom);
    ctx.fillText(new Date(t0).toISOString().slice(11, 19), left, height - 4);
    ctx.fillText(new Date(t1).toISOString().slice(11, 19), width - 70, height - 4);
  }
}
