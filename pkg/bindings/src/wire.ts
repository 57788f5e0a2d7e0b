/**
 * Native codec for the tagged trace wire format.
 *
 * A document is one line of alternating segments:
 *   <subtask>OP<answer>VALUE<subtask>OP<answer>VALUE...
 * Values are object lists ("name <bbox>(x, y, x, y)" entries), yes/no
 * booleans, "None", scene references ("there are [#2, #3]"), or bare text.
 */

export const SUBTASK_TAG = "<subtask>";
export const ANSWER_TAG = "<answer>";

export type TraceValue =
  | { kind: "objects"; entries: Array<{ name: string; box: [number, number, number, number] }> }
  | { kind: "boolean"; value: boolean }
  | { kind: "none" }
  | { kind: "scene"; labels: string[] }
  | { kind: "choice"; text: string }
  | { kind: "attribute"; text: string };

export interface TraceStep {
  operation: string;
  answer: TraceValue;
}

export interface Trace {
  steps: TraceStep[];
  finalAnswer: string;
}

export class WireParseError extends Error {
  constructor(
    readonly position: number,
    readonly reason: string,
  ) {
    super(`offset ${position}: ${reason}`);
    this.name = "WireParseError";
  }
}

const ENTRY = /^(.+?) <bbox>\(([^()]*)\)$/;
const SCENE_REF = /^there are \[([^\]]*)\]$/;

function parseObjectList(text: string, position: number): TraceValue {
  const chunks = text.split("), ");
  const entries: Array<{ name: string; box: [number, number, number, number] }> = [];
  chunks.forEach((chunk, k) => {
    const piece = k < chunks.length - 1 ? `${chunk})` : chunk;
    const m = ENTRY.exec(piece.trim());
    if (m === null) {
      throw new WireParseError(position, `malformed object entry ${JSON.stringify(piece)}`);
    }
    const nums = m[2].split(",").map((s) => s.trim());
    if (nums.length !== 4) {
      throw new WireParseError(position, `bbox tuple has ${nums.length} components`);
    }
    const coords = nums.map(Number);
    if (coords.some((c) => Number.isNaN(c))) {
      throw new WireParseError(position, `non-numeric bbox component in (${m[2]})`);
    }
    const [xl, yl, xr, yr] = coords;
    if (xl > xr || yl > yr || coords.some((c) => c < 0 || c > 1)) {
      throw new WireParseError(position, `invalid box (${m[2]})`);
    }
    entries.push({ name: m[1].trim(), box: [xl, yl, xr, yr] });
  });
  return { kind: "objects", entries };
}

function parseValue(operation: string, answer: string, position: number): TraceValue {
  const text = answer.trim();
  if (!text) {
    throw new WireParseError(position, "empty answer segment");
  }
  if (text === "None") {
    return { kind: "none" };
  }
  if (text === "yes" || text === "no") {
    return { kind: "boolean", value: text === "yes" };
  }
  const scene = SCENE_REF.exec(text);
  if (scene !== null) {
    const labels = scene[1]
      .split(",")
      .map((s) => s.trim())
      .filter((s) => s.length > 0);
    return { kind: "scene", labels };
  }
  if (text.includes("<bbox>")) {
    return parseObjectList(text, position);
  }
  const opName = operation.split("(", 1)[0].trim();
  return opName.startsWith("choose") ? { kind: "choice", text } : { kind: "attribute", text };
}

export function renderValue(value: TraceValue): string {
  switch (value.kind) {
    case "objects":
      return value.entries
        .map((e) => `${e.name} <bbox>(${e.box.map(renderCoord).join(", ")})`)
        .join(", ");
    case "boolean":
      return value.value ? "yes" : "no";
    case "none":
      return "None";
    case "scene":
      return `there are [${value.labels.join(", ")}]`;
    default:
      return value.text;
  }
}

/** Shortest decimal form matching the producer's float rendering ("0.5", "0.0"). */
function renderCoord(c: number): string {
  return Number.isInteger(c) ? `${c}.0` : String(c);
}

export function answerText(value: TraceValue): string {
  if (value.kind === "objects") {
    return value.entries.map((e) => e.name).join(", ");
  }
  return renderValue(value);
}

export function parseDocument(doc: string): Trace {
  if (!doc.trim()) {
    throw new WireParseError(0, "empty document");
  }
  if (!doc.startsWith(SUBTASK_TAG)) {
    throw new WireParseError(0, `document must start with ${SUBTASK_TAG}`);
  }
  const steps: TraceStep[] = [];
  let offset = SUBTASK_TAG.length;
  for (const segment of doc.slice(SUBTASK_TAG.length).split(SUBTASK_TAG)) {
    const pieces = segment.split(ANSWER_TAG);
    if (pieces.length !== 2) {
      throw new WireParseError(offset, `segment needs exactly one ${ANSWER_TAG}`);
    }
    const [operation, answer] = pieces;
    if (!operation.trim()) {
      throw new WireParseError(offset, "empty operation segment");
    }
    steps.push({ operation, answer: parseValue(operation, answer, offset) });
    offset += segment.length + SUBTASK_TAG.length;
  }
  return { steps, finalAnswer: answerText(steps[steps.length - 1].answer) };
}

export function serializeDocument(trace: Trace): string {
  return trace.steps
    .map((s) => `${SUBTASK_TAG}${s.operation}${ANSWER_TAG}${renderValue(s.answer)}`)
    .join("");
}
