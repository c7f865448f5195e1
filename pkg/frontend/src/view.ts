import type { RoundView, SessionView, Tile } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function tileCard(tile: Tile): HTMLElement {
  const card = el("figure", "tile");
  if (tile.image_uri) {
    const img = el("img");
    img.src = tile.image_uri;
    img.alt = tile.caption ?? tile.id;
    img.loading = "lazy";
    card.appendChild(img);
  } else {
    // Embedding-only corpora have no pixels; show a caption card.
    card.appendChild(el("div", "tile-placeholder", tile.caption ?? tile.id));
  }
  const meta = el("figcaption");
  meta.appendChild(el("span", "tile-caption", tile.caption ?? tile.id));
  meta.appendChild(el("span", "tile-score", tile.score.toFixed(3)));
  card.appendChild(meta);
  return card;
}

function roundEntry(round: RoundView, isCurrent: boolean): HTMLElement {
  const entry = el("li", isCurrent ? "round current" : "round");
  const header = el("div", "round-header");
  header.appendChild(el("span", "round-no", `round ${round.round}`));
  if (round.rank !== null) {
    header.appendChild(el("span", "round-rank", `target rank ${round.rank}`));
  }
  entry.appendChild(header);
  if (round.question !== null) {
    entry.appendChild(el("p", "round-q", `Q: ${round.question}`));
    entry.appendChild(el("p", "round-a", `A: ${round.answer ?? ""}`));
  }
  // The query the system actually searched with, auditable per round.
  const details = el("details", "round-query");
  details.appendChild(el("summary", undefined, "searched for"));
  details.appendChild(el("code", undefined, round.reformulated_query));
  entry.appendChild(details);
  return entry;
}

export interface ViewHandlers {
  onStart: (caption: string) => void;
  onAnswer: (text: string) => void;
  onEnd: () => void;
  onRetry: () => void;
}

export class ConsoleView {
  private startForm: HTMLFormElement;
  private captionInput: HTMLInputElement;
  private answerForm: HTMLFormElement;
  private answerInput: HTMLInputElement;
  private questionBanner: HTMLElement;
  private grid: HTMLElement;
  private timeline: HTMLElement;
  private errorBanner: HTMLElement;
  private endButton: HTMLButtonElement;
  private downloadSlot: HTMLElement;

  constructor(root: Document, private readonly handlers: ViewHandlers) {
    this.startForm = root.querySelector("#start-form") as HTMLFormElement;
    this.captionInput = root.querySelector("#caption-input") as HTMLInputElement;
    this.answerForm = root.querySelector("#answer-form") as HTMLFormElement;
    this.answerInput = root.querySelector("#answer-input") as HTMLInputElement;
    this.questionBanner = root.querySelector("#question-banner") as HTMLElement;
    this.grid = root.querySelector("#grid") as HTMLElement;
    this.timeline = root.querySelector("#timeline") as HTMLElement;
    this.errorBanner = root.querySelector("#error-banner") as HTMLElement;
    this.endButton = root.querySelector("#end-button") as HTMLButtonElement;
    this.downloadSlot = root.querySelector("#download-slot") as HTMLElement;

    this.startForm.addEventListener("submit", (event) => {
      event.preventDefault();
      const caption = this.captionInput.value.trim();
      if (caption) {
        this.handlers.onStart(caption);
      }
    });
    this.answerForm.addEventListener("submit", (event) => {
      event.preventDefault();
      const text = this.answerInput.value.trim();
      if (text) {
        this.handlers.onAnswer(text);
      }
    });
    this.endButton.addEventListener("click", () => this.handlers.onEnd());
  }

  render(view: SessionView): void {
    const started = view.sessionId !== null;
    this.startForm.hidden = started;
    this.answerForm.hidden = !started || view.done || !view.pendingQuestion;
    this.endButton.hidden = !started || view.log !== null;

    this.questionBanner.textContent = view.pendingQuestion
      ? view.pendingQuestion
      : view.done
        ? "session finished"
        : "";

    // Input stays enabled with its text intact on errors; only an
    // in-flight request disables it.
    this.captionInput.disabled = view.busy;
    this.answerInput.disabled = view.busy;
    (this.answerForm.querySelector("button") as HTMLButtonElement).disabled = view.busy;

    this.errorBanner.hidden = view.error === null;
    if (view.error !== null) {
      this.errorBanner.textContent = "";
      this.errorBanner.appendChild(el("span", undefined, view.error));
      const retry = el("button", "retry", "retry");
      retry.addEventListener("click", () => this.handlers.onRetry());
      this.errorBanner.appendChild(retry);
    }

    const current = view.rounds[view.rounds.length - 1];
    this.grid.textContent = "";
    if (current) {
      for (const tile of current.results) {
        this.grid.appendChild(tileCard(tile));
      }
    }

    this.timeline.textContent = "";
    for (const round of view.rounds) {
      this.timeline.appendChild(roundEntry(round, round === current));
    }

    this.downloadSlot.textContent = "";
    if (view.log !== null) {
      const blob = new Blob([JSON.stringify(view.log) + "\n"],
        { type: "application/json" });
      const link = el("a", "download", "download episode log");
      link.href = URL.createObjectURL(blob);
      link.download = `${view.sessionId ?? "episode"}.jsonl`;
      this.downloadSlot.appendChild(link);
    }

    if (!view.busy && !view.done && started) {
      this.answerInput.focus();
    }
  }

  clearAnswerInput(): void {
    this.answerInput.value = "";
  }
}
