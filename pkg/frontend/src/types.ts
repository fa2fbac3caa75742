export const CHOICES = ["prefer_A", "prefer_B", "same", "neither"] as const;
export type Choice = (typeof CHOICES)[number];

/** Exact rater-facing wording for the four options. */
export const CHOICE_LABELS: Record<Choice, string> = {
  prefer_A: "I prefer image A",
  prefer_B: "I prefer image B",
  same: "The images are exactly the same",
  neither: "Neither of the images is a good match for this text",
};

export interface TaskView {
  task_id: string;
  caption: string;
  image_left: string;
  image_right: string;
}

export interface Progress {
  completed: number;
  total: number;
}

export interface NextTaskResponse {
  done: boolean;
  task: TaskView | null;
  progress: Progress;
}

export interface VoteRecord {
  task_id: string;
  rater_id: string;
  choice: Choice;
  timestamp: number;
}

const TASK_FIELDS = new Set(["task_id", "caption", "image_left", "image_right"]);

/**
 * Strict task parser: accepts exactly the public task schema and rejects any
 * extra field, so model provenance can never reach the client state even if
 * a misconfigured server were to leak it.
 */
export function parseTaskView(raw: unknown): TaskView {
  if (typeof raw !== "object" || raw === null) {
    throw new Error("task payload is not an object");
  }
  const obj = raw as Record<string, unknown>;
  for (const key of Object.keys(obj)) {
    if (!TASK_FIELDS.has(key)) {
      throw new Error(`unexpected field in task payload: ${key}`);
    }
  }
  for (const key of TASK_FIELDS) {
    if (typeof obj[key] !== "string") {
      throw new Error(`task payload missing string field: ${key}`);
    }
  }
  return {
    task_id: obj.task_id as string,
    caption: obj.caption as string,
    image_left: obj.image_left as string,
    image_right: obj.image_right as string,
  };
}

export function isChoice(value: unknown): value is Choice {
  return typeof value === "string" && (CHOICES as readonly string[]).includes(value);
}
