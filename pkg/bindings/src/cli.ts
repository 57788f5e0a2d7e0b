/**
 * Subprocess plumbing: every operation goes through the `sotkit` command
 * line and its documented file formats; nothing reaches into the Python
 * package's internals.
 */

import { spawnSync } from "node:child_process";
import {
  existsSync,
  mkdirSync,
  mkdtempSync,
  readFileSync,
  rmSync,
  writeFileSync,
} from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";

export class CliConfigError extends Error {}
export class CliInputError extends Error {}
export class CliEndpointError extends Error {}
export class CliInternalError extends Error {}

const ERRORS: Record<number, new (message: string) => Error> = {
  1: CliConfigError,
  2: CliInputError,
  3: CliEndpointError,
  4: CliInternalError,
};

function command(): { bin: string; prefix: string[] } {
  const python = process.env.SOTKIT_PYTHON ?? "python3";
  if (process.env.SOTKIT_CLI) {
    return { bin: process.env.SOTKIT_CLI, prefix: [] };
  }
  return { bin: python, prefix: ["-m", "sotkit.cli"] };
}

export function runCli(args: string[]): string {
  const { bin, prefix } = command();
  const result = spawnSync(bin, [...prefix, ...args], { encoding: "utf-8" });
  if (result.error) {
    throw new CliInternalError(`failed to spawn sotkit CLI: ${result.error.message}`);
  }
  const code = result.status ?? 4;
  if (code !== 0) {
    const ctor = ERRORS[code] ?? CliInternalError;
    throw new ctor(result.stderr.trim() || `sotkit exited with code ${code}`);
  }
  return result.stdout;
}

export interface Workspace {
  dir: string;
  path(name: string): string;
  write(name: string, content: string): string;
  read(name: string): string;
  has(name: string): boolean;
  dispose(): void;
}

export function workspace(): Workspace {
  const dir = mkdtempSync(join(tmpdir(), "sotkit-bindings-"));
  return {
    dir,
    path: (name) => join(dir, name),
    write(name, content) {
      const p = join(dir, name);
      mkdirSync(dirname(p), { recursive: true });
      writeFileSync(p, content, "utf-8");
      return p;
    },
    read: (name) => readFileSync(join(dir, name), "utf-8"),
    has: (name) => existsSync(join(dir, name)),
    dispose: () => rmSync(dir, { recursive: true, force: true }),
  };
}
