/**
 * Render a consolidated sweep JSON into a deterministic SVG heatmap.
 *
 *   mcrfm-plots <sweep.json> --metric delta|ratio|mean --out fig.svg [--title ...]
 *
 * Exit codes: 0 ok, 2 usage, 3 schema mismatch / unreadable input.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { buildHeatmapSvg, Metric } from "./heatmap.js";
import { SchemaError, parseSweepTable } from "./schema.js";

const METRICS: Metric[] = ["delta", "ratio", "mean"];

export function runCli(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        metric: { type: "string", default: "delta" },
        out: { type: "string" },
        title: { type: "string" },
      },
    });
  } catch (e) {
    console.error(`usage error: ${(e as Error).message}`);
    return 2;
  }
  const [input] = parsed.positionals;
  const metric = parsed.values.metric as string;
  const out = parsed.values.out;
  if (!input || !out || !METRICS.includes(metric as Metric)) {
    console.error(
      "usage: mcrfm-plots <sweep.json> --out <fig.svg> [--metric delta|ratio|mean] [--title ...]"
    );
    return 2;
  }
  let raw: string;
  try {
    raw = readFileSync(input, "utf-8");
  } catch (e) {
    console.error(`cannot read ${input}: ${(e as Error).message}`);
    return 3;
  }
  let table;
  try {
    table = parseSweepTable(JSON.parse(raw));
  } catch (e) {
    if (e instanceof SchemaError || e instanceof SyntaxError) {
      console.error(`invalid sweep table: ${e.message}`);
      return 3;
    }
    throw e;
  }
  const svg = buildHeatmapSvg(table, {
    metric: metric as Metric,
    title: parsed.values.title,
  });
  writeFileSync(out, svg, "utf-8");
  console.log(`wrote ${out}`);
  return 0;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("cli.ts")) {
  process.exit(runCli(process.argv.slice(2)));
}
