export { buildHeatmapSvg, heatmapRows } from "./heatmap.js";
export type { HeatmapOptions, Metric } from "./heatmap.js";
export { parseSweepTable, SchemaError, SUPPORTED_SCHEMA_VERSION } from "./schema.js";
export type { Cell, Row, SweepTable } from "./schema.js";
export { deltaColor, divergingColor, ratioColor, NEUTRAL_COLOR } from "./colormap.js";
export { runCli } from "./cli.js";
