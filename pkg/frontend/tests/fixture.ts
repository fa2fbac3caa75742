import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";
import { AddressInfo } from "node:net";

/** Server-side task record; subject_side must never leave the fixture. */
export interface FixtureTask {
  task_id: string;
  caption: string;
  image_left: string;
  image_right: string;
  subject_side: "left" | "right";
}

interface StoredVote {
  task_id: string;
  rater_id: string;
  choice: string;
  timestamp: number;
}

const CHOICES = new Set(["prefer_A", "prefer_B", "same", "neither"]);

/** In-memory stand-in for the annotation service, same wire format. */
export class FixtureService {
  readonly votes: StoredVote[] = [];
  private readonly seen = new Set<string>();
  private server: Server | null = null;

  constructor(
    private readonly tasks: FixtureTask[],
    private readonly ratersPerItem = 3,
  ) {}

  async start(): Promise<string> {
    this.server = createServer((req, res) => this.route(req, res));
    await new Promise<void>((resolve) => this.server!.listen(0, "127.0.0.1", resolve));
    const { port } = this.server!.address() as AddressInfo;
    return `http://127.0.0.1:${port}`;
  }

  async stop(): Promise<void> {
    if (this.server) {
      await new Promise<void>((resolve, reject) =>
        this.server!.close((err) => (err ? reject(err) : resolve())),
      );
    }
  }

  private route(req: IncomingMessage, res: ServerResponse): void {
    const url = new URL(req.url ?? "/", "http://localhost");
    if (req.method === "GET" && url.pathname === "/tasks/next") {
      this.nextTask(url.searchParams.get("rater") ?? "", res);
    } else if (req.method === "POST" && url.pathname === "/votes") {
      let body = "";
      req.on("data", (chunk) => (body += chunk));
      req.on("end", () => this.postVote(body, res));
    } else if (req.method === "GET" && url.pathname === "/export") {
      res.writeHead(200, { "Content-Type": "text/plain" });
      res.end(this.votes.map((v) => JSON.stringify(v) + "\n").join(""));
    } else {
      json(res, 404, { detail: "not found" });
    }
  }

  private nextTask(rater: string, res: ServerResponse): void {
    let completed = 0;
    let pending: FixtureTask | null = null;
    for (const task of this.tasks) {
      if (this.seen.has(`${task.task_id}:${rater}`)) {
        completed += 1;
        continue;
      }
      const count = this.votes.filter((v) => v.task_id === task.task_id).length;
      if (pending === null && count < this.ratersPerItem) pending = task;
    }
    const progress = { completed, total: this.tasks.length };
    if (pending === null) {
      json(res, 200, { done: true, task: null, progress });
      return;
    }
    // public view: provenance stripped, mirroring the real service
    const { subject_side, ...publicView } = pending;
    json(res, 200, { done: false, task: publicView, progress });
  }

  private postVote(body: string, res: ServerResponse): void {
    let vote: { task_id?: string; rater_id?: string; choice?: string };
    try {
      vote = JSON.parse(body);
    } catch {
      json(res, 422, { detail: "invalid JSON" });
      return;
    }
    if (!vote.task_id || !vote.rater_id || !vote.choice) {
      json(res, 422, { detail: "missing fields" });
      return;
    }
    if (!this.tasks.some((t) => t.task_id === vote.task_id)) {
      json(res, 404, { detail: "unknown task" });
      return;
    }
    if (!CHOICES.has(vote.choice)) {
      json(res, 422, { detail: "invalid choice" });
      return;
    }
    const key = `${vote.task_id}:${vote.rater_id}`;
    if (this.seen.has(key)) {
      json(res, 409, { detail: "already voted" });
      return;
    }
    this.seen.add(key);
    this.votes.push({
      task_id: vote.task_id,
      rater_id: vote.rater_id,
      choice: vote.choice,
      timestamp: Date.now() / 1000,
    });
    json(res, 201, { status: "recorded" });
  }
}

function json(res: ServerResponse, status: number, payload: unknown): void {
  res.writeHead(status, { "Content-Type": "application/json" });
  res.end(JSON.stringify(payload));
}

export function makeTasks(n: number): FixtureTask[] {
  return Array.from({ length: n }, (_, i) => ({
    task_id: `q${String(i).padStart(3, "0")}`,
    caption: `caption ${i}`,
    image_left: `/images/L${i}.jpg`,
    image_right: `/images/R${i}.jpg`,
    subject_side: i % 2 === 0 ? "left" : "right",
  }));
}
