/**
 * Node bindings for the sotkit pipeline.
 *
 * A handle wraps read-only scene-graph and question collections plus
 * execution/filtration options. executeQuestion, filterDocument, and
 * computeMetrics shell out to the sotkit CLI and exchange data through its
 * line-delimited corpus files, so their outputs are byte-identical to
 * direct CLI runs. parseDocument decodes the tagged wire format natively.
 */

import { runCli, workspace, CliInputError } from "./cli.js";
import { parseDocument as parseWire, Trace } from "./wire.js";

export {
  CliConfigError,
  CliEndpointError,
  CliInputError,
  CliInternalError,
} from "./cli.js";
export {
  Trace,
  TraceStep,
  TraceValue,
  WireParseError,
  answerText,
  serializeDocument,
} from "./wire.js";

export const VERSION = "0.1.0";

export class ValidationError extends Error {
  constructor(
    readonly field: string,
    message: string,
  ) {
    super(message);
    this.name = "ValidationError";
  }
}

export interface SceneObject {
  name: string;
  x: number;
  y: number;
  w: number;
  h: number;
  attributes?: string[];
  relations?: Array<{ name: string; object: string }>;
}

export interface SceneGraph {
  width: number;
  height: number;
  objects: Record<string, SceneObject>;
}

export interface RawOperation {
  operation: string;
  dependencies: number[];
  argument: string;
}

export interface Question {
  imageId: string;
  question: string;
  answer: string;
  types?: Record<string, string>;
  semantic: RawOperation[];
}

export interface ExecOptions {
  precision?: number;
  strict?: boolean;
  hMid?: number;
  vMid?: number;
}

export interface FilterOptions {
  maxSteps?: number;
  maxChars?: number;
}

export interface Verdict {
  accepted: boolean;
  reason: string;
  detail: string;
}

export interface CorpusRecord {
  questionId: string;
  document: string;
}

export interface MetricsReport {
  n_records: number;
  n_box_scored: number;
  n_missing_box: number;
  n_trace_scored: number;
  answer_accuracy: number;
  mean_iou_correct: number;
  thresholds: Record<string, Record<string, number>>;
  op_accuracy: number;
  consistency: Record<string, Record<string, number>>;
  warnings: string[];
  /** verbatim metrics.json bytes, for byte-level comparisons */
  raw: string;
}

export interface BoundHandle {
  readonly scenes: Readonly<Record<string, SceneGraph>>;
  readonly questions: Readonly<Record<string, Question>>;
  readonly execOptions: Readonly<ExecOptions>;
  readonly filterOptions: Readonly<FilterOptions>;
}

function deepFreeze<T>(value: T): T {
  if (value !== null && typeof value === "object") {
    for (const key of Object.getOwnPropertyNames(value)) {
      deepFreeze((value as Record<string, unknown>)[key]);
    }
    Object.freeze(value);
  }
  return value;
}

function requireField(mapping: Record<string, unknown>, field: string, where: string): void {
  if (!(field in mapping) || mapping[field] === undefined || mapping[field] === null) {
    throw new ValidationError(field, `${where} is missing the "${field}" field`);
  }
}

function validateScene(imageId: string, scene: SceneGraph): void {
  const where = `scene graph ${imageId}`;
  requireField(scene as unknown as Record<string, unknown>, "width", where);
  requireField(scene as unknown as Record<string, unknown>, "height", where);
  requireField(scene as unknown as Record<string, unknown>, "objects", where);
  for (const [oid, obj] of Object.entries(scene.objects)) {
    for (const field of ["name", "x", "y", "w", "h"] as const) {
      requireField(obj as unknown as Record<string, unknown>, field, `${where} object ${oid}`);
    }
  }
}

function validateQuestion(questionId: string, q: Question): void {
  const where = `question ${questionId}`;
  for (const field of ["imageId", "question", "answer", "semantic"] as const) {
    requireField(q as unknown as Record<string, unknown>, field, where);
  }
  if (!Array.isArray(q.semantic) || q.semantic.length === 0) {
    throw new ValidationError("semantic", `${where} has an empty operation list`);
  }
}

/** Build a read-only handle; mutation attempts throw in strict-mode code. */
export function createHandle(
  scenes: Record<string, SceneGraph>,
  questions: Record<string, Question>,
  execOptions: ExecOptions = {},
  filterOptions: FilterOptions = {},
): BoundHandle {
  for (const [imageId, scene] of Object.entries(scenes)) {
    validateScene(imageId, scene);
  }
  for (const [questionId, q] of Object.entries(questions)) {
    validateQuestion(questionId, q);
  }
  const handle = {
    scenes: structuredClone(scenes),
    questions: structuredClone(questions),
    execOptions: { ...execOptions },
    filterOptions: { ...filterOptions },
  };
  return deepFreeze(handle);
}

function baseArgs(handle: BoundHandle, ws: ReturnType<typeof workspace>): string[] {
  const config: Record<string, unknown> = {
    scene_graphs: ws.path("scene_graphs.json"),
    questions: ws.path("questions.json"),
    out: ws.path("out"),
  };
  const { precision, strict, hMid, vMid } = handle.execOptions;
  if (precision !== undefined) config.precision = precision;
  if (strict !== undefined) config.strict = strict;
  if (hMid !== undefined) config.h_mid = hMid;
  if (vMid !== undefined) config.v_mid = vMid;
  const { maxSteps, maxChars } = handle.filterOptions;
  if (maxSteps !== undefined) config.max_steps = maxSteps;
  if (maxChars !== undefined) config.max_chars = maxChars;
  ws.write("config.json", JSON.stringify(config));
  return ["--config", ws.path("config.json")];
}

function writeInputs(handle: BoundHandle, ws: ReturnType<typeof workspace>, questionIds: string[]): void {
  const questions: Record<string, Question> = {};
  for (const qid of questionIds) {
    const q = handle.questions[qid];
    if (q === undefined) {
      throw new ValidationError("questionId", `question ${qid} is not in the handle`);
    }
    questions[qid] = q;
  }
  ws.write("scene_graphs.json", JSON.stringify(handle.scenes));
  ws.write("questions.json", JSON.stringify(questions));
}

/** Run one question through offline generation; returns the document line. */
export function executeQuestion(handle: BoundHandle, questionId: string): string {
  const ws = workspace();
  try {
    writeInputs(handle, ws, [questionId]);
    runCli(["gen-sot", "--mode", "offline", ...baseArgs(handle, ws)]);
    if (ws.has("out/gen_failures.jsonl")) {
      const failure = JSON.parse(ws.read("out/gen_failures.jsonl").split("\n")[0]);
      throw new CliInputError(`generation failed: ${failure.reason}`);
    }
    const lines = ws.read("out/sot_corpus.txt").split("\n").filter((l) => l.length > 0);
    if (lines.length !== 1) {
      throw new CliInputError(`expected one document, got ${lines.length}`);
    }
    return lines[0];
  } finally {
    ws.dispose();
  }
}

/** Decode a tagged document into a plain trace mapping (native, no subprocess). */
export function parseDocument(doc: string): Trace {
  return parseWire(doc);
}

/** Apply the three filtration rules to one document. */
export function filterDocument(
  handle: BoundHandle,
  doc: string,
  groundTruth: string,
): Verdict {
  if (doc.includes("\n")) {
    throw new ValidationError("document", "documents are single lines");
  }
  const ws = workspace();
  try {
    ws.write("scene_graphs.json", JSON.stringify({}));
    ws.write("questions.json", JSON.stringify({}));
    ws.write("out/.keep", "");
    ws.write("out/sot_corpus.txt", doc + "\n");
    ws.write(
      "out/sot_meta.jsonl",
      JSON.stringify({
        line: 0,
        question_id: "doc0",
        image_id: "",
        ground_truth: groundTruth,
        verdict: null,
      }) + "\n",
    );
    runCli(["filter", ...baseArgs(handle, ws)]);
    const rejected = ws.read("out/rejections.jsonl").split("\n").filter((l) => l);
    if (rejected.length > 0) {
      const rec = JSON.parse(rejected[0]);
      return { accepted: false, reason: rec.reason, detail: rec.detail };
    }
    const meta = JSON.parse(ws.read("out/accepted_meta.jsonl").split("\n")[0]);
    return meta.verdict as Verdict;
  } finally {
    ws.dispose();
  }
}

/** Score predicted documents against the handle's questions and scenes. */
export function computeMetrics(handle: BoundHandle, records: CorpusRecord[]): MetricsReport {
  if (records.length === 0) {
    throw new ValidationError("records", "records must be non-empty");
  }
  const ws = workspace();
  try {
    writeInputs(handle, ws, records.map((r) => r.questionId));
    const docs = records.map((r) => r.document + "\n").join("");
    const meta = records
      .map((r, i) =>
        JSON.stringify({
          line: i,
          question_id: r.questionId,
          image_id: handle.questions[r.questionId].imageId,
          ground_truth: handle.questions[r.questionId].answer,
          verdict: null,
        }),
      )
      .join("\n");
    ws.write("out/.keep", "");
    const corpusPath = ws.write("out/pred_corpus.txt", docs);
    const metaPath = ws.write("out/pred_meta.jsonl", meta + "\n");
    runCli([
      "eval",
      "--pred-corpus",
      corpusPath,
      "--pred-meta",
      metaPath,
      ...baseArgs(handle, ws),
    ]);
    const raw = ws.read("out/metrics.json");
    return { ...(JSON.parse(raw) as Omit<MetricsReport, "raw">), raw };
  } finally {
    ws.dispose();
  }
}
