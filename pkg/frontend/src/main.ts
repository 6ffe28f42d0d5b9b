import { FigureId, FigureSpec, render } from "./figures.js";

const USAGE = `usage: node dist/main.js --figure sim1|sim2|sim3 --input CSV [--input CSV] --out FILE.svg

figure inputs:
  sim1  roles_timeseries.csv [replicas.csv]   (figure1 artifacts)
  sim2  p_sweep.csv                           (figure2-sweep artifact)
  sim3  rho_sweep.csv                         (figure3-sweep artifact)`;

function parseArgs(argv: string[]): FigureSpec {
  const inputs: string[] = [];
  let figureId: string | undefined;
  let outPath: string | undefined;
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--figure":
        figureId = argv[++i];
        break;
      case "--input":
        inputs.push(argv[++i]);
        break;
      case "--out":
        outPath = argv[++i];
        break;
      case "--help":
        console.log(USAGE);
        process.exit(0);
      default:
        throw new Error(`unknown argument: ${argv[i]}`);
    }
  }
  if (!figureId || !["sim1", "sim2", "sim3"].includes(figureId)) {
    throw new Error("--figure must be one of sim1, sim2, sim3");
  }
  if (inputs.length === 0) throw new Error("at least one --input CSV is required");
  if (!outPath) throw new Error("--out is required");
  return { figureId: figureId as FigureId, inputs, outPath };
}

try {
  const spec = parseArgs(process.argv.slice(2));
  render(spec);
  console.log(`wrote ${spec.outPath}`);
} catch (err) {
  console.error(String(err instanceof Error ? err.message : err));
  console.error(USAGE);
  process.exit(1);
}
