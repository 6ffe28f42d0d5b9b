import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { SchemaError, readArtifact, requireColumns } from "../src/csv.js";
import { render } from "../src/figures.js";

const FIXTURES = join(__dirname, "fixtures");
const ROLES = join(FIXTURES, "fig1", "roles_timeseries.csv");
const REPLICAS = join(FIXTURES, "fig1", "replicas.csv");
const P_SWEEP = join(FIXTURES, "fig2", "p_sweep.csv");
const RHO_SWEEP = join(FIXTURES, "fig3", "rho_sweep.csv");

function outPath(name: string): string {
  return join(mkdtempSync(join(tmpdir(), "figs-")), name);
}

describe("artifact parsing", () => {
  it("reads the reproducibility header and rows", () => {
    const table = readArtifact(P_SWEEP);
    expect(table.meta["master_seed"]).toBe("42");
    expect(table.columns).toContain("uwr");
    expect(table.rows.length).toBe(6);
  });

  it("names the missing column in schema errors", () => {
    const table = readArtifact(P_SWEEP);
    expect(() => requireColumns(table, ["nonexistent_col"])).toThrowError(
      /missing column "nonexistent_col"/,
    );
  });

  it("rejects empty artifacts", () => {
    const empty = outPath("empty.csv");
    writeFileSync(empty, "# polsim experiment artifact\n", "utf8");
    expect(() => readArtifact(empty)).toThrowError(SchemaError);
  });
});

describe("figure rendering", () => {
  it("sim1 renders role populations with the 200-verifier reference line", () => {
    const out = outPath("sim1.svg");
    const svg = render({ figureId: "sim1", inputs: [ROLES, REPLICAS], outPath: out });
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg).toContain("verifier floor 200");
    expect(svg).toContain("verifiers");
    expect(svg).toContain("mean block interval");
    expect(readFileSync(out, "utf8")).toBe(svg);
  });

  it("sim2 renders the sweep with the annotated peak", () => {
    const out = outPath("sim2.svg");
    const svg = render({ figureId: "sim2", inputs: [P_SWEEP], outPath: out });
    expect(svg).toContain("peak");
    expect(svg).toContain("useful work ratio");
    // the peak annotation carries the measured value at p = 5e-5
    expect(svg).toMatch(/peak 0\.8[0-9]*/);
  });

  it("sim3 renders one series per (alpha, gamma) combination", () => {
    const out = outPath("sim3.svg");
    const svg = render({ figureId: "sim3", inputs: [RHO_SWEEP], outPath: out });
    expect(svg).toContain("alpha=1, gamma=0");
    expect(svg).toContain("alpha=10, gamma=0.05");
  });

  it("fails with a schema error when a required column is absent", () => {
    const bad = outPath("bad.csv");
    writeFileSync(bad, "p,ubgr\n0.001,0.9\n", "utf8");
    expect(() => render({ figureId: "sim2", inputs: [bad], outPath: outPath("x.svg") }))
      .toThrowError(/missing column "uwr"/);
  });

  it("is deterministic for identical inputs", () => {
    const a = render({ figureId: "sim2", inputs: [P_SWEEP], outPath: outPath("a.svg") });
    const b = render({ figureId: "sim2", inputs: [P_SWEEP], outPath: outPath("b.svg") });
    expect(a).toBe(b);
  });
});
