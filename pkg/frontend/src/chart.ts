/**
 * Line-chart geometry shared by the SVG and PNG backends.
 *
 * The layout is computed once (scales, ticks, legend) and each backend walks
 * the same structures, so the two outputs always agree about the data.
 */

import { Canvas, RGB } from "./png.js";
import { textWidth, GLYPH_STRIDE } from "./font.js";

export interface Series {
  label: string;
  points: [number, number][];
}

export interface ChartSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  width?: number;
  height?: number;
}

export class ChartError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ChartError";
  }
}

export const PALETTE: RGB[] = [
  [31, 119, 180],
  [255, 127, 14],
  [44, 160, 44],
  [214, 39, 40],
  [148, 103, 189],
  [140, 86, 75],
  [227, 119, 194],
  [127, 127, 127],
];

const MARGIN = { left: 64, right: 16, top: 28, bottom: 40 };

interface Layout {
  width: number;
  height: number;
  plotX: number;
  plotY: number;
  plotW: number;
  plotH: number;
  xDomain: [number, number];
  yDomain: [number, number];
  xTicks: number[];
  yTicks: number[];
}

/** Round tick positions covering [lo, hi] (1/2/5 ladder). */
export function niceTicks(lo: number, hi: number, target = 5): number[] {
  if (!(Number.isFinite(lo) && Number.isFinite(hi))) return [0];
  if (lo === hi) {
    const pad = lo === 0 ? 1 : Math.abs(lo) * 0.1;
    lo -= pad;
    hi += pad;
  }
  const span = hi - lo;
  const step0 = Math.pow(10, Math.floor(Math.log10(span / target)));
  let step = step0;
  for (const mult of [1, 2, 5, 10]) {
    step = step0 * mult;
    if (span / step <= target * 1.5) break;
  }
  const ticks: number[] = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) {
    ticks.push(Math.abs(v) < step * 1e-9 ? 0 : v);
  }
  return ticks.length ? ticks : [lo, hi];
}

export function formatTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 10000 || a < 0.001) return v.toExponential(1).replace("e+", "e").replace("e-", "e-");
  const s = v.toPrecision(4);
  return s.includes(".") ? s.replace(/\.?0+$/, "") : s;
}

function computeLayout(spec: ChartSpec): Layout {
  if (spec.series.length === 0 || spec.series.every((s) => s.points.length === 0)) {
    throw new ChartError(`chart '${spec.title}': no data points in any series`);
  }
  const width = spec.width ?? 640;
  const height = spec.height ?? 400;
  const xs = spec.series.flatMap((s) => s.points.map((p) => p[0]));
  const ys = spec.series.flatMap((s) => s.points.map((p) => p[1]));
  let xLo = Math.min(...xs);
  let xHi = Math.max(...xs);
  let yLo = Math.min(...ys);
  let yHi = Math.max(...ys);
  if (xLo === xHi) {
    xLo -= 1;
    xHi += 1;
  }
  if (yLo === yHi) {
    const pad = yLo === 0 ? 1 : Math.abs(yLo) * 0.1;
    yLo -= pad;
    yHi += pad;
  } else {
    const pad = (yHi - yLo) * 0.05;
    yLo -= pad;
    yHi += pad;
  }
  return {
    width,
    height,
    plotX: MARGIN.left,
    plotY: MARGIN.top,
    plotW: width - MARGIN.left - MARGIN.right,
    plotH: height - MARGIN.top - MARGIN.bottom,
    xDomain: [xLo, xHi],
    yDomain: [yLo, yHi],
    xTicks: niceTicks(xLo, xHi, 6).filter((v) => v >= xLo && v <= xHi),
    yTicks: niceTicks(yLo, yHi, 5).filter((v) => v >= yLo && v <= yHi),
  };
}

function sx(l: Layout, x: number): number {
  return l.plotX + ((x - l.xDomain[0]) / (l.xDomain[1] - l.xDomain[0])) * l.plotW;
}

function sy(l: Layout, y: number): number {
  return l.plotY + l.plotH - ((y - l.yDomain[0]) / (l.yDomain[1] - l.yDomain[0])) * l.plotH;
}

export function renderSvg(spec: ChartSpec): string {
  const l = computeLayout(spec);
  const esc = (s: string) =>
    s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${l.width}" height="${l.height}" viewBox="0 0 ${l.width} ${l.height}">`,
  );
  parts.push(`<rect width="${l.width}" height="${l.height}" fill="white"/>`);
  parts.push(
    `<text x="${l.width / 2}" y="18" text-anchor="middle" font-family="monospace" font-size="13">${esc(spec.title)}</text>`,
  );
  // frame + grid lines + tick labels
  parts.push(
    `<rect x="${l.plotX}" y="${l.plotY}" width="${l.plotW}" height="${l.plotH}" fill="none" stroke="black"/>`,
  );
  for (const t of l.xTicks) {
    const x = sx(l, t).toFixed(2);
    parts.push(
      `<line x1="${x}" y1="${l.plotY + l.plotH}" x2="${x}" y2="${l.plotY + l.plotH + 4}" stroke="black"/>`,
    );
    parts.push(
      `<text x="${x}" y="${l.plotY + l.plotH + 16}" text-anchor="middle" font-family="monospace" font-size="10">${formatTick(t)}</text>`,
    );
  }
  for (const t of l.yTicks) {
    const y = sy(l, t).toFixed(2);
    parts.push(`<line x1="${l.plotX - 4}" y1="${y}" x2="${l.plotX}" y2="${y}" stroke="black"/>`);
    parts.push(
      `<text x="${l.plotX - 6}" y="${Number(y) + 3}" text-anchor="end" font-family="monospace" font-size="10">${formatTick(t)}</text>`,
    );
    parts.push(
      `<line x1="${l.plotX}" y1="${y}" x2="${l.plotX + l.plotW}" y2="${y}" stroke="#dddddd" stroke-dasharray="2,3"/>`,
    );
  }
  parts.push(
    `<text x="${l.plotX + l.plotW / 2}" y="${l.height - 6}" text-anchor="middle" font-family="monospace" font-size="11">${esc(spec.xLabel)}</text>`,
  );
  parts.push(
    `<text x="14" y="${l.plotY + l.plotH / 2}" text-anchor="middle" font-family="monospace" font-size="11" transform="rotate(-90 14 ${l.plotY + l.plotH / 2})">${esc(spec.yLabel)}</text>`,
  );
  spec.series.forEach((s, i) => {
    const [r, g, b] = PALETTE[i % PALETTE.length];
    const color = `rgb(${r},${g},${b})`;
    if (s.points.length === 1) {
      const [px, py] = s.points[0];
      parts.push(
        `<circle cx="${sx(l, px).toFixed(2)}" cy="${sy(l, py).toFixed(2)}" r="3" fill="${color}"/>`,
      );
    } else {
      const d = s.points
        .map(([px, py], k) => `${k === 0 ? "M" : "L"}${sx(l, px).toFixed(2)},${sy(l, py).toFixed(2)}`)
        .join(" ");
      parts.push(`<path d="${d}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
    }
    const ly = l.plotY + 14 + i * 14;
    parts.push(
      `<rect x="${l.plotX + l.plotW - 150}" y="${ly - 8}" width="10" height="10" fill="${color}"/>`,
    );
    parts.push(
      `<text x="${l.plotX + l.plotW - 136}" y="${ly}" font-family="monospace" font-size="10">${esc(s.label)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

export function renderPng(spec: ChartSpec): Buffer {
  const l = computeLayout(spec);
  const canvas = new Canvas(l.width, l.height);
  const black: RGB = [0, 0, 0];
  const grid: RGB = [221, 221, 221];
  canvas.text(Math.round(l.width / 2 - textWidth(spec.title) / 2), 10, spec.title, black);
  for (const t of l.yTicks) {
    const y = Math.round(sy(l, t));
    for (let x = l.plotX; x < l.plotX + l.plotW; x += 4) canvas.set(x, y, grid);
    const label = formatTick(t);
    canvas.text(l.plotX - 6 - textWidth(label), y - 3, label, black);
    canvas.line(l.plotX - 4, y, l.plotX, y, black);
  }
  for (const t of l.xTicks) {
    const x = Math.round(sx(l, t));
    canvas.line(x, l.plotY + l.plotH, x, l.plotY + l.plotH + 4, black);
    const label = formatTick(t);
    canvas.text(x - Math.round(textWidth(label) / 2), l.plotY + l.plotH + 8, label, black);
  }
  // frame
  canvas.line(l.plotX, l.plotY, l.plotX + l.plotW, l.plotY, black);
  canvas.line(l.plotX, l.plotY + l.plotH, l.plotX + l.plotW, l.plotY + l.plotH, black);
  canvas.line(l.plotX, l.plotY, l.plotX, l.plotY + l.plotH, black);
  canvas.line(l.plotX + l.plotW, l.plotY, l.plotX + l.plotW, l.plotY + l.plotH, black);
  canvas.text(
    Math.round(l.plotX + l.plotW / 2 - textWidth(spec.xLabel) / 2),
    l.height - 12,
    spec.xLabel,
    black,
  );
  canvas.text(4, 4, spec.yLabel, black);
  spec.series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    if (s.points.length === 1) {
      canvas.marker(sx(l, s.points[0][0]), sy(l, s.points[0][1]), color);
    }
    for (let k = 1; k < s.points.length; k++) {
      canvas.line(
        sx(l, s.points[k - 1][0]),
        sy(l, s.points[k - 1][1]),
        sx(l, s.points[k][0]),
        sy(l, s.points[k][1]),
        color,
      );
    }
    const ly = l.plotY + 8 + i * 12;
    canvas.fillRect(l.plotX + l.plotW - 150, ly, 8, 8, color);
    canvas.text(l.plotX + l.plotW - 138, ly, s.label.slice(0, Math.floor(130 / GLYPH_STRIDE)), black);
  });
  return canvas.encodePng();
}
