/**
 * One request, one fresh python child.
 *
 * The program lands in a temp file and runs under a wall-clock watchdog;
 * --restricted additionally applies kernel resource limits.  Every
 * outcome maps onto an ExecResponse; nothing throws past this module.
 */

import { spawn } from "node:child_process";
import { mkdtemp, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import path from "node:path";

import type { ExecRequest, ExecResponse } from "./protocol.js";

export interface ExecuteOptions {
  /** Cap child CPU seconds and address space where the platform allows. */
  restricted?: boolean;
  /** Interpreter override, mainly for tests. */
  python?: string;
}

const ADDRESS_SPACE_KIB = 1024 * 1024; // 1 GiB
const STDERR_TAIL = 16 * 1024;

export function pythonExecutable(): string {
  return process.env.PYRUNNER_PYTHON || "python3";
}

function spawnArgs(
  programPath: string,
  request: ExecRequest,
  options: ExecuteOptions,
): [string, string[]] {
  const python = options.python ?? pythonExecutable();
  if (!options.restricted || process.platform === "win32") {
    return [python, [programPath]];
  }
  // CPU cap one second past the wall-clock timeout so the watchdog
  // normally wins and the caller sees "timeout", not a signal kill.
  const cpuSeconds = Math.ceil(request.timeout_s) + 1;
  const script =
    `ulimit -t ${cpuSeconds} 2>/dev/null; ` +
    `ulimit -v ${ADDRESS_SPACE_KIB} 2>/dev/null; ` +
    `exec "$0" "$1"`;
  return ["/bin/sh", ["-c", script, python, programPath]];
}

function lastStderrLine(stderr: string): string {
  const lines = stderr.split("\n");
  for (let i = lines.length - 1; i >= 0; i--) {
    const line = (lines[i] ?? "").trim();
    if (line) return line;
  }
  return "";
}

export async function execute(
  request: ExecRequest,
  options: ExecuteOptions = {},
): Promise<ExecResponse> {
  const started = Date.now();
  let dir: string | undefined;
  try {
    dir = await mkdtemp(path.join(tmpdir(), "pyrunner-"));
    const programPath = path.join(dir, "program.py");
    await writeFile(programPath, request.program, "utf8");
    const [command, args] = spawnArgs(programPath, request, options);
    return await runChild(command, args, request, started);
  } catch (err) {
    // Worker-side failure (temp dir, spawn): still answered in-protocol.
    return {
      id: request.id,
      passed: false,
      error: `worker error: ${(err as Error).message}`,
      duration_ms: Date.now() - started,
    };
  } finally {
    if (dir) {
      await rm(dir, { recursive: true, force: true }).catch(() => {});
    }
  }
}

function runChild(
  command: string,
  args: string[],
  request: ExecRequest,
  started: number,
): Promise<ExecResponse> {
  return new Promise((resolve) => {
    const child = spawn(command, args, { stdio: ["ignore", "ignore", "pipe"] });
    let stderr = "";
    let timedOut = false;

    child.stderr.setEncoding("utf8");
    child.stderr.on("data", (chunk: string) => {
      // Bounded tail; only the last line feeds the error field.
      stderr = (stderr + chunk).slice(-STDERR_TAIL);
    });

    const watchdog = setTimeout(() => {
      timedOut = true;
      child.kill("SIGKILL");
    }, request.timeout_s * 1000);

    child.on("error", (err) => {
      clearTimeout(watchdog);
      resolve({
        id: request.id,
        passed: false,
        error: `worker error: ${err.message}`,
        duration_ms: Date.now() - started,
      });
    });

    child.on("close", (code, signal) => {
      clearTimeout(watchdog);
      const duration_ms = Date.now() - started;
      if (timedOut) {
        resolve({ id: request.id, passed: false, error: "timeout", duration_ms });
      } else if (signal !== null) {
        resolve({ id: request.id, passed: false, error: "crash", duration_ms });
      } else if (code === 0) {
        resolve({ id: request.id, passed: true, duration_ms });
      } else {
        const reason = lastStderrLine(stderr) || `exit status ${code}`;
        resolve({ id: request.id, passed: false, error: reason, duration_ms });
      }
    });
  });
}
