// DOM behavior of the annotation screen, driven with a stubbed client.
// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { AnnotatorApp } from "../src/app.js";
import { ApiClient, SubmitOutcome } from "../src/api.js";
import { CHOICE_LABELS, NextTaskResponse, TaskView } from "../src/types.js";

function task(id: string): TaskView {
  return {
    task_id: id,
    caption: `caption for ${id}`,
    image_left: `/L-${id}.jpg`,
    image_right: `/R-${id}.jpg`,
  };
}

class StubClient {
  queue: NextTaskResponse[] = [];
  votes: Array<{ task_id: string; choice: string }> = [];
  submitOutcome: SubmitOutcome = "recorded";
  failNext = false;
  failSubmit = false;

  async nextTask(): Promise<NextTaskResponse> {
    if (this.failNext) {
      this.failNext = false;
      throw new Error("network down");
    }
    const next = this.queue.shift();
    if (!next) return { done: true, task: null, progress: { completed: 0, total: 0 } };
    return next;
  }

  async submitVote(taskId: string, _rater: string, choice: string): Promise<SubmitOutcome> {
    if (this.failSubmit) {
      this.failSubmit = false;
      throw new Error("network down");
    }
    this.votes.push({ task_id: taskId, choice });
    return this.submitOutcome;
  }
}

function pending(id: string, completed = 0, total = 2): NextTaskResponse {
  return { done: false, task: task(id), progress: { completed, total } };
}

let root: HTMLElement;
let client: StubClient;
let app: AnnotatorApp;

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app")!;
  client = new StubClient();
  app = new AnnotatorApp(root, client as unknown as ApiClient, "rater-x");
});

function loadImages(): void {
  for (const img of root.querySelectorAll("img")) {
    img.dispatchEvent(new Event("load"));
  }
}

function radios(): HTMLInputElement[] {
  return [...root.querySelectorAll<HTMLInputElement>("input[name=choice]")];
}

async function settle(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("annotator screen", () => {
  it("renders the four options with their exact wording, disabled until images load", async () => {
    client.queue = [pending("q1")];
    await app.start();

    const labels = [...root.querySelectorAll("label.choice")].map((l) => l.textContent);
    expect(labels).toEqual([
      "I prefer image A",
      "I prefer image B",
      "The images are exactly the same",
      "Neither of the images is a good match for this text",
    ]);
    expect(radios().every((r) => r.disabled)).toBe(true);

    loadImages();
    expect(radios().every((r) => !r.disabled)).toBe(true);
    expect(root.querySelector<HTMLButtonElement>(".submit-button")!.disabled).toBe(false);
  });

  it("stays disabled while only one image has loaded", async () => {
    client.queue = [pending("q1")];
    await app.start();
    root.querySelector("img")!.dispatchEvent(new Event("load"));
    expect(radios().every((r) => r.disabled)).toBe(true);
  });

  it("submits the selected choice and advances to the next task", async () => {
    client.queue = [pending("q1"), pending("q2", 1)];
    await app.start();
    loadImages();

    radios()[2].checked = true; // "The images are exactly the same"
    root.querySelector("form")!.dispatchEvent(new Event("submit"));
    await settle();

    expect(client.votes).toEqual([{ task_id: "q1", choice: "same" }]);
    expect(root.querySelector(".caption")!.textContent).toBe("caption for q2");
  });

  it("double submission posts exactly one vote", async () => {
    client.queue = [pending("q1")];
    await app.start();
    loadImages();
    radios()[0].checked = true;

    const form = root.querySelector("form")!;
    form.dispatchEvent(new Event("submit"));
    form.dispatchEvent(new Event("submit"));
    await settle();

    expect(client.votes).toHaveLength(1);
  });

  it("shows the already-voted notice on conflict and still advances", async () => {
    client.queue = [pending("q1"), pending("q2", 1)];
    client.submitOutcome = "duplicate";
    await app.start();
    loadImages();
    radios()[1].checked = true;
    root.querySelector("form")!.dispatchEvent(new Event("submit"));
    await settle();

    expect(root.querySelector(".caption")!.textContent).toBe("caption for q2");
  });

  it("shows the done screen when every task is complete", async () => {
    client.queue = [{ done: true, task: null, progress: { completed: 2, total: 2 } }];
    await app.start();
    expect(root.querySelector(".done-screen")).not.toBeNull();
    expect(root.querySelector(".progress")!.textContent).toContain("2 of 2");
  });

  it("offers retry on a network failure and recovers without losing votes", async () => {
    client.failNext = true;
    client.queue = [pending("q1")];
    await app.start();

    expect(root.querySelector(".error-banner")).not.toBeNull();
    root.querySelector<HTMLButtonElement>(".retry-button")!.click();
    await settle();

    expect(root.querySelector(".caption")!.textContent).toBe("caption for q1");
    expect(client.votes).toHaveLength(0);
  });

  it("keeps the vote local and retryable when submission fails", async () => {
    client.queue = [pending("q1")];
    await app.start();
    loadImages();
    radios()[3].checked = true;

    client.failSubmit = true;
    const form = root.querySelector("form")!;
    form.dispatchEvent(new Event("submit"));
    await settle();
    expect(root.querySelector(".notice")!.textContent).toContain("retry");
    expect(client.votes).toHaveLength(0);

    form.dispatchEvent(new Event("submit"));
    await settle();
    expect(client.votes).toEqual([{ task_id: "q1", choice: "neither" }]);
  });

  it("renders no provenance anywhere in the document", async () => {
    client.queue = [pending("q1")];
    await app.start();
    loadImages();
    expect(root.innerHTML).not.toContain("subject_side");
    expect(root.innerHTML).not.toContain("cmcm");
  });

  it("label map covers the full choice enum", () => {
    expect(Object.keys(CHOICE_LABELS)).toEqual(["prefer_A", "prefer_B", "same", "neither"]);
  });
});
