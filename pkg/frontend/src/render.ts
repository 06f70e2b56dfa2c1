/**
 * Run-directory renderers.
 *
 * renderMetrics: one chart per metric column of metrics.csv, one series per
 * run directory (training-curve comparison across runs).
 *
 * renderDiag: two charts from one run's diag.csv: conflict-vs-step with one
 * series per probed timestep, and conflict-vs-timestep with one series per
 * probed step.
 *
 * All outputs are confined to a `plots/` subdirectory; inputs are opened
 * read-only and never modified.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { CsvError, Table, columnIndex, pairs, parseCsv, parseCsvRaw } from "./csv.js";
import { ChartSpec, renderPng, renderSvg } from "./chart.js";

export const METRIC_COLUMNS = [
  "loss_diff",
  "loss_repa",
  "loss_atta",
  "rho_min_t",
  "mmd",
  "feat_cos",
  "attn_ce",
] as const;

function readTable(file: string): Table {
  if (!fs.existsSync(file)) {
    throw new CsvError(`${file}: file not found`);
  }
  return parseCsv(fs.readFileSync(file, "utf-8"), file);
}

function writeChart(spec: ChartSpec, outDir: string, stem: string): string[] {
  fs.mkdirSync(outDir, { recursive: true });
  const svgPath = path.join(outDir, `${stem}.svg`);
  const pngPath = path.join(outDir, `${stem}.png`);
  fs.writeFileSync(svgPath, renderSvg(spec));
  fs.writeFileSync(pngPath, renderPng(spec));
  return [svgPath, pngPath];
}

export function renderMetrics(runDirs: string[], outDir?: string): string[] {
  if (runDirs.length === 0) {
    throw new CsvError("render-metrics: no run directories given");
  }
  const tables = runDirs.map((dir) => ({
    dir,
    label: path.basename(path.resolve(dir)),
    table: readTable(path.join(dir, "metrics.csv")),
  }));
  const target = outDir ?? path.join(runDirs[0], "plots");
  const written: string[] = [];
  for (const column of METRIC_COLUMNS) {
    for (const t of tables) {
      columnIndex(t.table, column, path.join(t.dir, "metrics.csv"));
    }
    const series = tables
      .map((t) => ({ label: t.label, points: pairs(t.table, "step", column, t.dir) }))
      .filter((s) => s.points.length > 0);
    if (series.length === 0) {
      continue; // column exists but was never populated (e.g. probes disabled)
    }
    const spec: ChartSpec = {
      title: `${column} vs step`,
      xLabel: "step",
      yLabel: column,
      series,
    };
    written.push(...writeChart(spec, target, column));
  }
  if (written.length === 0) {
    throw new CsvError("render-metrics: no populated metric columns in any run");
  }
  return written;
}

export function renderDiag(runDir: string, outDir?: string): string[] {
  const file = path.join(runDir, "diag.csv");
  if (!fs.existsSync(file)) {
    throw new CsvError(`${file}: file not found`);
  }
  const raw = parseCsvRaw(fs.readFileSync(file, "utf-8"), file);
  const si = columnIndex(raw, "step", file);
  const ti = columnIndex(raw, "t", file);
  const ri = columnIndex(raw, "rho", file);

  const byT = new Map<string, [number, number][]>();
  const byStep = new Map<string, [number, number][]>();
  for (const row of raw.rows) {
    const step = Number(row[si]);
    const t = Number(row[ti]);
    const rho = Number(row[ri]);
    if ([step, t, rho].some((v) => Number.isNaN(v))) {
      throw new CsvError(`${file}: non-numeric step/t/rho row: ${row.join(",")}`);
    }
    const tKey = `t=${row[ti]}`;
    if (!byT.has(tKey)) byT.set(tKey, []);
    byT.get(tKey)!.push([step, rho]);
    const sKey = `step ${row[si]}`;
    if (!byStep.has(sKey)) byStep.set(sKey, []);
    byStep.get(sKey)!.push([t, rho]);
  }
  const target = outDir ?? path.join(runDir, "plots");
  const written: string[] = [];
  written.push(
    ...writeChart(
      {
        title: "gradient conflict vs step",
        xLabel: "step",
        yLabel: "rho",
        series: [...byT.entries()].map(([label, points]) => ({
          label,
          points: points.sort((a, b) => a[0] - b[0]),
        })),
      },
      target,
      "rho_vs_step",
    ),
  );
  written.push(
    ...writeChart(
      {
        title: "gradient conflict vs timestep",
        xLabel: "t",
        yLabel: "rho",
        series: [...byStep.entries()].map(([label, points]) => ({
          label,
          points: points.sort((a, b) => a[0] - b[0]),
        })),
      },
      target,
      "rho_vs_t",
    ),
  );
  return written;
}
