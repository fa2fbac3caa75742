import {
  Choice,
  NextTaskResponse,
  Progress,
  VoteRecord,
  isChoice,
  parseTaskView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export type SubmitOutcome = "recorded" | "duplicate";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the annotation service HTTP API. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async nextTask(raterId: string): Promise<NextTaskResponse> {
    const res = await this.fetchFn(
      `${this.baseUrl}/tasks/next?rater=${encodeURIComponent(raterId)}`,
    );
    if (!res.ok) {
      throw new ApiError(res.status, `next-task request failed (${res.status})`);
    }
    const body = (await res.json()) as {
      done: boolean;
      task: unknown;
      progress: Progress;
    };
    return {
      done: body.done,
      task: body.task === null ? null : parseTaskView(body.task),
      progress: body.progress,
    };
  }

  async submitVote(
    taskId: string,
    raterId: string,
    choice: Choice,
  ): Promise<SubmitOutcome> {
    const res = await this.fetchFn(`${this.baseUrl}/votes`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ task_id: taskId, rater_id: raterId, choice }),
    });
    if (res.status === 201) return "recorded";
    if (res.status === 409) return "duplicate";
    throw new ApiError(res.status, `vote rejected (${res.status})`);
  }

  async exportVotes(): Promise<VoteRecord[]> {
    const res = await this.fetchFn(`${this.baseUrl}/export`);
    if (!res.ok) {
      throw new ApiError(res.status, `export failed (${res.status})`);
    }
    const text = await res.text();
    const votes: VoteRecord[] = [];
    for (const line of text.split("\n")) {
      if (!line.trim()) continue;
      const rec = JSON.parse(line) as Record<string, unknown>;
      if (!isChoice(rec.choice)) {
        throw new Error(`export contains invalid choice: ${String(rec.choice)}`);
      }
      votes.push({
        task_id: String(rec.task_id),
        rater_id: String(rec.rater_id),
        choice: rec.choice,
        timestamp: Number(rec.timestamp),
      });
    }
    return votes;
  }
}
