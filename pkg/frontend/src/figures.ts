import { writeFileSync } from "node:fs";
import * as echarts from "echarts";
import { ArtifactTable, SchemaError, column, readArtifact, requireColumns } from "./csv.js";

export type FigureId = "sim1" | "sim2" | "sim3";

/** What to render: figure id, the CSV artifacts it needs, where the SVG goes. */
export interface FigureSpec {
  figureId: FigureId;
  inputs: string[];
  outPath: string;
  width?: number;
  height?: number;
}

const VERIFIER_FLOOR = 200; // n * g_v / g at the default parameters

/**
 * The SVG backend numbers classes/ids with global instance counters; rewrite
 * them to first-appearance order so identical inputs give identical bytes.
 */
function normalizeSvgIds(svg: string): string {
  const seen = new Map<string, string>();
  return svg.replace(/zr\d+-[a-z]+-?\d+/g, (token) => {
    if (!seen.has(token)) {
      const kind = token.replace(/^zr\d+-/, "").replace(/-?\d+$/, "");
      seen.set(token, `zr-${kind}-${seen.size}`);
    }
    return seen.get(token)!;
  });
}

function renderOption(option: echarts.EChartsCoreOption, spec: FigureSpec): string {
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width: spec.width ?? 900,
    height: spec.height ?? 540,
  });
  chart.setOption({ animation: false, ...option });
  const svg = chart.renderToSVGString();
  chart.dispose();
  return normalizeSvgIds(svg);
}

/** Thin the per-stage series so the SVG stays a sane size. */
function thin<T>(values: T[], maxPoints = 2400): T[] {
  if (values.length <= maxPoints) return values;
  const step = Math.ceil(values.length / maxPoints);
  return values.filter((_, i) => i % step === 0);
}

function fmt(x: number, digits = 3): string {
  return Number(x.toPrecision(digits)).toString();
}

/** Role populations over time, with the 200-verifier reference line. */
export function buildSim1(tables: ArtifactTable[], spec: FigureSpec): echarts.EChartsCoreOption {
  const roles = tables[0];
  requireColumns(roles, ["stage", "prover_useful", "prover_redundant", "verifier"]);
  const stages = thin(column(roles, "stage"));
  const useful = thin(column(roles, "prover_useful"));
  const redundant = thin(column(roles, "prover_redundant"));
  const verifier = thin(column(roles, "verifier"));

  let subtitle = "";
  if (tables.length > 1) {
    const replicas = tables[1];
    requireColumns(replicas, ["mean_block_interval", "fork_rate"]);
    const mean = (xs: number[]) => xs.reduce((a, b) => a + b, 0) / xs.length;
    const interval = mean(column(replicas, "mean_block_interval"));
    const fork = mean(column(replicas, "fork_rate"));
    subtitle = `mean block interval ${fmt(interval)} stages, fork rate ${fmt(fork, 2)}`;
  }

  const pair = (ys: number[]) => ys.map((y, i) => [stages[i], y]);
  return {
    title: { text: "Prover and verifier populations over time", subtext: subtitle },
    legend: { top: 48 },
    grid: { top: 90, right: 30 },
    xAxis: { type: "value", name: "stage", min: "dataMin", max: "dataMax" },
    yAxis: { type: "value", name: "miners" },
    series: [
      { type: "line", name: "useful-work provers", showSymbol: false, data: pair(useful) },
      { type: "line", name: "redundant provers", showSymbol: false, data: pair(redundant) },
      {
        type: "line",
        name: "verifiers",
        showSymbol: false,
        data: pair(verifier),
        markLine: {
          symbol: "none",
          label: { formatter: `verifier floor ${VERIFIER_FLOOR}`, position: "insideEndTop" },
          lineStyle: { type: "dashed" },
          data: [{ yAxis: VERIFIER_FLOOR }],
        },
      },
    ],
  };
}

/** Efficiency ratios and fork rate across block probabilities, peak annotated. */
export function buildSim2(tables: ArtifactTable[], spec: FigureSpec): echarts.EChartsCoreOption {
  const sweep = tables[0];
  requireColumns(sweep, ["p", "ubgr", "uwr", "fork_rate"]);
  const rows = [...sweep.rows].sort((a, b) => a.p - b.p);
  const peak = rows.reduce((best, row) => (row.uwr > best.uwr ? row : best), rows[0]);

  const series = (key: "ubgr" | "uwr" | "fork_rate", name: string) => ({
    type: "line",
    name,
    data: rows.map((r) => [r.p, r[key]]),
    ...(key === "uwr"
      ? {
          markPoint: {
            symbolSize: 60,
            label: {
              formatter: `peak ${fmt(peak.uwr)}\n@ p=${fmt(peak.p, 2)}\nfork ${fmt(peak.fork_rate, 2)}`,
              fontSize: 10,
            },
            data: [{ coord: [peak.p, peak.uwr], name: "peak" }],
          },
        }
      : {}),
  });

  return {
    title: { text: "Useful block generation ratio, useful work ratio and fork rate" },
    legend: { top: 28 },
    grid: { top: 70, right: 30 },
    xAxis: {
      type: "log",
      name: "block probability p",
      axisLabel: { formatter: (v: number) => fmt(v, 2) },
    },
    yAxis: { type: "value", name: "ratio", min: 0, max: 1 },
    series: [
      series("ubgr", "useful block generation ratio"),
      series("uwr", "useful work ratio"),
      series("fork_rate", "fork rate"),
    ],
  };
}

/** Strategic reward rate against the honest-training ratio per (alpha, gamma). */
export function buildSim3(tables: ArtifactTable[], spec: FigureSpec): echarts.EChartsCoreOption {
  const sweep = tables[0];
  requireColumns(sweep, ["rho", "alpha", "gamma", "reward_rate"]);
  const combos = new Map<string, { alpha: number; gamma: number; points: [number, number][] }>();
  for (const row of sweep.rows) {
    const key = `${row.alpha}|${row.gamma}`;
    if (!combos.has(key)) combos.set(key, { alpha: row.alpha, gamma: row.gamma, points: [] });
    combos.get(key)!.points.push([row.rho, row.reward_rate]);
  }
  const series = [...combos.values()]
    .sort((a, b) => a.alpha - b.alpha || a.gamma - b.gamma)
    .map((combo) => ({
      type: "line",
      name: `alpha=${combo.alpha}, gamma=${combo.gamma}`,
      data: combo.points.sort((a, b) => a[0] - b[0]),
    }));
  return {
    title: { text: "Average task reward rate by honest training ratio" },
    legend: { top: 28 },
    grid: { top: 80, right: 30 },
    xAxis: { type: "value", name: "honest ratio", min: 0, max: 1 },
    yAxis: { type: "value", name: "reward per stage" },
    series,
  };
}

const BUILDERS: Record<FigureId, (tables: ArtifactTable[], spec: FigureSpec) => echarts.EChartsCoreOption> = {
  sim1: buildSim1,
  sim2: buildSim2,
  sim3: buildSim3,
};

const REQUIRED_INPUTS: Record<FigureId, number> = { sim1: 1, sim2: 1, sim3: 1 };

/** Render one figure to an SVG file and return the SVG text. */
export function render(spec: FigureSpec): string {
  if (!(spec.figureId in BUILDERS)) {
    throw new SchemaError(`unknown figure id "${spec.figureId}"`);
  }
  if (spec.inputs.length < REQUIRED_INPUTS[spec.figureId]) {
    throw new SchemaError(`${spec.figureId}: needs at least ${REQUIRED_INPUTS[spec.figureId]} input CSV`);
  }
  const tables = spec.inputs.map(readArtifact);
  const option = BUILDERS[spec.figureId](tables, spec);
  const svg = renderOption(option, spec);
  writeFileSync(spec.outPath, svg, "utf8");
  return svg;
}
