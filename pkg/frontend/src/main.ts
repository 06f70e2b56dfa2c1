/**
 * CLI entry point.
 *
 *   node main.js render-metrics RUN_DIR [RUN_DIR...] [--out DIR]
 *   node main.js render-diag RUN_DIR [--out DIR]
 *
 * Exit 0 on success; named errors go to stderr with exit 1.
 */

import { pathToFileURL } from "node:url";

import { CsvError } from "./csv.js";
import { ChartError } from "./chart.js";
import { renderDiag, renderMetrics } from "./render.js";

function parseArgs(argv: string[]): { cmd: string; dirs: string[]; out?: string } {
  const [cmd, ...rest] = argv;
  const dirs: string[] = [];
  let out: string | undefined;
  for (let i = 0; i < rest.length; i++) {
    if (rest[i] === "--out") {
      out = rest[++i];
      if (out === undefined) throw new CsvError("--out requires a directory argument");
    } else {
      dirs.push(rest[i]);
    }
  }
  return { cmd, dirs, out };
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs(argv);
    if (parsed.cmd === "render-metrics") {
      if (parsed.dirs.length === 0) throw new CsvError("render-metrics: no run directories given");
      const written = renderMetrics(parsed.dirs, parsed.out);
      console.log(`wrote ${written.length} files:\n` + written.join("\n"));
      return 0;
    }
    if (parsed.cmd === "render-diag") {
      if (parsed.dirs.length !== 1) throw new CsvError("render-diag: exactly one run directory");
      const written = renderDiag(parsed.dirs[0], parsed.out);
      console.log(`wrote ${written.length} files:\n` + written.join("\n"));
      return 0;
    }
    console.error(`unknown command '${parsed.cmd ?? ""}'; expected render-metrics or render-diag`);
    return 1;
  } catch (err) {
    if (err instanceof CsvError || err instanceof ChartError) {
      console.error(`${err.name}: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

const isDirectRun = process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;
if (isDirectRun) {
  process.exit(main(process.argv.slice(2)));
}
