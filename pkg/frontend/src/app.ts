import { ApiClient } from "./api.js";
import { CHOICES, CHOICE_LABELS, Choice, Progress, TaskView } from "./types.js";

/**
 * Annotation screen controller. Shows one caption with images A and B, keeps
 * the four options disabled until both images have loaded, submits exactly
 * one vote per task, and advances past tasks the rater already voted on.
 */
export class AnnotatorApp {
  private submitting = false;
  private imagesReady = 0;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
    private readonly raterId: string,
  ) {}

  async start(): Promise<void> {
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    let res;
    try {
      res = await this.client.nextTask(this.raterId);
    } catch {
      this.renderError("Could not reach the annotation service.");
      return;
    }
    if (res.done || res.task === null) {
      this.renderDone(res.progress);
      return;
    }
    this.renderTask(res.task, res.progress);
  }

  private renderError(message: string): void {
    this.root.replaceChildren();
    const banner = el("div", "error-banner", message);
    const retry = el("button", "retry-button", "Retry") as HTMLButtonElement;
    retry.addEventListener("click", () => void this.loadNext());
    this.root.append(banner, retry);
  }

  private renderDone(progress: Progress): void {
    this.root.replaceChildren();
    this.root.append(
      el("div", "done-screen", "All done - thank you!"),
      el("div", "progress", `${progress.completed} of ${progress.total} tasks completed`),
    );
  }

  private renderTask(task: TaskView, progress: Progress): void {
    this.root.replaceChildren();
    this.imagesReady = 0;
    this.submitting = false;

    this.root.append(
      el("div", "progress", `Task ${progress.completed + 1} of ${progress.total}`),
      el("p", "caption", task.caption),
    );

    const pair = el("div", "image-pair");
    for (const [side, url] of [["A", task.image_left], ["B", task.image_right]] as const) {
      const figure = el("figure", `image-${side}`);
      const img = document.createElement("img");
      img.alt = `Image ${side}`;
      img.addEventListener("load", () => this.onImageReady());
      img.addEventListener("error", () =>
        this.renderError("An image failed to load."),
      );
      img.src = url;
      figure.append(img, el("figcaption", "image-label", `Image ${side}`));
      pair.append(figure);
    }
    this.root.append(pair);

    const form = document.createElement("form");
    form.className = "choices";
    for (const choice of CHOICES) {
      const label = el("label", "choice") as HTMLLabelElement;
      const input = document.createElement("input");
      input.type = "radio";
      input.name = "choice";
      input.value = choice;
      input.disabled = true;
      label.append(input, document.createTextNode(CHOICE_LABELS[choice]));
      form.append(label);
    }
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.className = "submit-button";
    submit.textContent = "Submit";
    submit.disabled = true;
    form.append(submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const picked = form.querySelector<HTMLInputElement>("input[name=choice]:checked");
      if (picked) void this.submit(task.task_id, picked.value as Choice);
    });
    this.root.append(form, el("div", "notice"));
  }

  private onImageReady(): void {
    this.imagesReady += 1;
    if (this.imagesReady < 2) return;
    for (const input of this.root.querySelectorAll<HTMLInputElement>("input[name=choice]")) {
      input.disabled = false;
    }
    const submit = this.root.querySelector<HTMLButtonElement>(".submit-button");
    if (submit) submit.disabled = false;
  }

  private notice(message: string): void {
    const box = this.root.querySelector(".notice");
    if (box) box.textContent = message;
  }

  private async submit(taskId: string, choice: Choice): Promise<void> {
    if (this.submitting) return; // double submissions post exactly once
    this.submitting = true;
    let outcome;
    try {
      outcome = await this.client.submitVote(taskId, this.raterId, choice);
    } catch {
      this.submitting = false;
      this.notice("Could not submit your vote - please retry.");
      return;
    }
    if (outcome === "duplicate") {
      this.notice("You already voted on this task - moving on.");
    }
    await this.loadNext();
  }
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}
