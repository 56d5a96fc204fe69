/**
 * Line-delimited JSON protocol between the harness and this worker.
 *
 * One ExecRequest per stdin line, one ExecResponse per stdout line, in
 * request order.  stdout carries protocol traffic only; diagnostics go
 * to stderr.
 */

export interface ExecRequest {
  id: string;
  program: string;
  timeout_s: number;
}

export interface ExecResponse {
  id: string;
  passed: boolean;
  /** Exception text, "timeout", or "crash".  Never present when passed. */
  error?: string;
  duration_ms: number;
}

export type ParseResult =
  | { ok: true; request: ExecRequest }
  | { ok: false; id: string; reason: string };

/**
 * Validate one stdin line.  On failure the salvaged id (if the line got
 * far enough to carry one) lets the reply still be matched to a request.
 */
export function parseRequest(line: string): ParseResult {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    return { ok: false, id: "", reason: `invalid JSON: ${(err as Error).message}` };
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    return { ok: false, id: "", reason: "request must be a JSON object" };
  }
  const obj = raw as Record<string, unknown>;
  const id = typeof obj.id === "string" ? obj.id : "";
  if (!id) {
    return { ok: false, id, reason: "id must be a non-empty string" };
  }
  if (typeof obj.program !== "string") {
    return { ok: false, id, reason: "program must be a string" };
  }
  const timeout = obj.timeout_s;
  if (typeof timeout !== "number" || !Number.isFinite(timeout) || timeout <= 0) {
    return { ok: false, id, reason: "timeout_s must be a positive number" };
  }
  return { ok: true, request: { id, program: obj.program, timeout_s: timeout } };
}

export function failureResponse(id: string, reason: string): ExecResponse {
  return { id, passed: false, error: reason, duration_ms: 0 };
}

export function serializeResponse(response: ExecResponse): string {
  return JSON.stringify(response) + "\n";
}
