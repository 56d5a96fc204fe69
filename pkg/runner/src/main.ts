/**
 * Sandbox worker executing assembled benchmark programs.
 *
 * Emits "READY" once on startup, then reads one ExecRequest JSON per
 * stdin line and answers with one ExecResponse JSON per stdout line,
 * strictly in request order.  Exits when stdin closes.
 *
 *   node dist/main.js [--restricted]
 */

import { createInterface } from "node:readline";

import { execute, type ExecuteOptions } from "./execute.js";
import { failureResponse, parseRequest, serializeResponse, type ExecResponse } from "./protocol.js";

function parseArgv(argv: string[]): ExecuteOptions {
  const options: ExecuteOptions = {};
  for (const arg of argv) {
    if (arg === "--restricted") {
      options.restricted = true;
    } else {
      process.stderr.write(`pyrunner: unknown argument ${arg}\n`);
      process.exit(2);
    }
  }
  return options;
}

async function main(argv: string[]): Promise<void> {
  const options = parseArgv(argv);
  const lines = createInterface({ input: process.stdin, crlfDelay: Infinity });

  process.stdout.write("READY\n");

  // readline buffers while a child runs; draining in arrival order is
  // what keeps responses in request order.
  for await (const line of lines) {
    if (!line.trim()) continue;
    const parsed = parseRequest(line);
    let response: ExecResponse;
    if (parsed.ok) {
      response = await execute(parsed.request, options);
    } else {
      process.stderr.write(`pyrunner: rejected request: ${parsed.reason}\n`);
      response = failureResponse(parsed.id, `invalid request: ${parsed.reason}`);
    }
    process.stdout.write(serializeResponse(response));
  }
}

main(process.argv.slice(2)).catch((err) => {
  process.stderr.write(`pyrunner: fatal: ${err instanceof Error ? err.stack : String(err)}\n`);
  process.exit(1);
});
