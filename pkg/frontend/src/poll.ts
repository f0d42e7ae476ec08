import type { Job } from "./types.js";

export interface PollOptions {
  intervalMs?: number;
  backoffFactor?: number;
  maxIntervalMs?: number;
  timeoutMs?: number;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/**
 * Poll a job until it reaches a terminal state. 1s interval with gentle
 * backoff; resolves on done, throws on failed or timeout.
 */
export async function pollJob(
  getJob: (id: string) => Promise<Job>,
  jobId: string,
  options: PollOptions = {},
): Promise<Job> {
  const intervalMs = options.intervalMs ?? 1000;
  const backoff = options.backoffFactor ?? 1.5;
  const maxIntervalMs = options.maxIntervalMs ?? 10_000;
  const timeoutMs = options.timeoutMs ?? 120_000;

  let wait = intervalMs;
  const started = Date.now();
  for (;;) {
    const job = await getJob(jobId);
    if (job.status === "done") return job;
    if (job.status === "failed") {
      throw new Error(job.error ?? `job ${jobId} failed`);
    }
    if (Date.now() - started > timeoutMs) {
      throw new Error(`job ${jobId} still ${job.status} after ${timeoutMs}ms`);
    }
    await sleep(wait);
    wait = Math.min(wait * backoff, maxIntervalMs);
  }
}
