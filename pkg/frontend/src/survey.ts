import { ApiError, fetchNextPair, fetchProgress, postVote } from "./api.js";
import { rememberCity } from "./cities.js";
import { isDone } from "./types.js";
import type { PairView, Progress, Winner } from "./types.js";

const KEY_BINDINGS: Record<string, Winner> = {
  ArrowLeft: "left",
  ArrowRight: "right",
  s: "skip",
};

/** Pairwise rating screen. One vote in flight at a time; every acceptance
 * or 409 moves to the server's next unanswered pair, so the client holds
 * no cursor of its own. */
export class SurveyScreen {
  private current: PairView | null = null;
  private inflight = false;
  private op: Promise<void> = Promise.resolve();
  private retryWinner: Winner | null = null;

  private readonly onKey = (event: KeyboardEvent) => {
    const winner = KEY_BINDINGS[event.key];
    if (!winner || this.inflight || !this.current) {
      return;
    }
    event.preventDefault();
    this.op = this.vote(winner);
  };

  constructor(
    private readonly root: HTMLElement,
    private readonly rater: string,
  ) {
    root.innerHTML = `
      <div class="progress">
        <div class="progress-track"><div class="progress-fill" style="width: 0%"></div></div>
        <span class="progress-text"></span>
      </div>
      <div class="banner hidden" role="alert">
        <span class="banner-text"></span>
        <button type="button" class="retry">Retry</button>
      </div>
      <div class="stage"></div>
    `;
    this.query(".retry").addEventListener("click", () => {
      if (!this.inflight) {
        this.op = this.retry();
      }
    });
    document.addEventListener("keydown", this.onKey);
  }

  start(): Promise<void> {
    this.op = this.load();
    return this.op;
  }

  /** Settles after the operation currently in flight (for tests). */
  whenIdle(): Promise<void> {
    return this.op;
  }

  dispose(): void {
    document.removeEventListener("keydown", this.onKey);
  }

  private query<T extends HTMLElement = HTMLElement>(selector: string): T {
    const el = this.root.querySelector<T>(selector);
    if (!el) {
      throw new Error(`survey screen lost its ${selector}`);
    }
    return el;
  }

  private async load(): Promise<void> {
    try {
      await this.refresh();
      this.hideBanner();
    } catch {
      this.showBanner("Could not reach the survey service.", null);
    }
  }

  private async vote(winner: Winner): Promise<void> {
    if (this.inflight || !this.current) {
      return;
    }
    this.inflight = true;
    this.setButtonsEnabled(false);
    const pair = this.current;
    try {
      await postVote(pair.pair_id, winner, this.rater);
      this.hideBanner();
      await this.refresh();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // already answered (another tab, or a retry of a vote that did land):
        // the log is authoritative, just move to the next unanswered pair
        this.hideBanner();
        await this.refresh().catch(() => this.showBanner("Could not reach the survey service.", winner));
      } else {
        this.showBanner("Vote not recorded: network problem.", winner);
      }
    } finally {
      this.inflight = false;
      this.setButtonsEnabled(true);
    }
  }

  private async retry(): Promise<void> {
    const winner = this.retryWinner;
    if (winner === null) {
      return this.load();
    }
    return this.vote(winner);
  }

  private async refresh(): Promise<void> {
    const [progress, next] = await Promise.all([fetchProgress(this.rater), fetchNextPair(this.rater)]);
    this.renderProgress(progress);
    if (isDone(next)) {
      this.current = null;
      this.renderComplete();
    } else {
      this.current = next;
      this.renderPair(next);
    }
  }

  private renderProgress(progress: Progress): void {
    const pct = progress.total > 0 ? (100 * progress.answered) / progress.total : 0;
    this.query<HTMLDivElement>(".progress-fill").style.width = `${pct.toFixed(1)}%`;
    this.query(".progress-text").textContent =
      `${progress.answered} / ${progress.total} answered · ${progress.liked_so_far} liked so far`;
  }

  private renderPair(pair: PairView): void {
    rememberCity(pair.left.id);
    rememberCity(pair.right.id);
    this.query(".stage").innerHTML = `
      <div class="pair" data-pair-id="${pair.pair_id}">
        <figure class="side">
          <img class="photo-left" src="${pair.left.image_url}" alt="left image ${pair.left.id}">
          <figcaption>${pair.left.id}</figcaption>
        </figure>
        <figure class="side">
          <img class="photo-right" src="${pair.right.image_url}" alt="right image ${pair.right.id}">
          <figcaption>${pair.right.id}</figcaption>
        </figure>
      </div>
      <div class="controls">
        <button type="button" class="vote" data-winner="left">&larr; Left</button>
        <button type="button" class="vote" data-winner="skip">Skip (s)</button>
        <button type="button" class="vote" data-winner="right">Right &rarr;</button>
      </div>
      <p class="hint">Arrow keys vote, s skips. Which place would you rather be in?</p>
    `;
    for (const button of this.root.querySelectorAll<HTMLButtonElement>("button.vote")) {
      button.addEventListener("click", () => {
        if (!this.inflight) {
          this.op = this.vote(button.dataset.winner as Winner);
        }
      });
    }
  }

  private renderComplete(): void {
    this.query(".stage").innerHTML = `
      <div class="complete">
        <h2>Survey complete</h2>
        <p>Every pair is answered. Thank you!</p>
        <a class="gallery-link" href="#gallery">See your preference maps</a>
      </div>
    `;
  }

  private setButtonsEnabled(enabled: boolean): void {
    for (const button of this.root.querySelectorAll<HTMLButtonElement>("button.vote")) {
      button.disabled = !enabled;
    }
  }

  private showBanner(message: string, retryWinner: Winner | null): void {
    this.retryWinner = retryWinner;
    this.query(".banner-text").textContent = message;
    this.query(".banner").classList.remove("hidden");
  }

  private hideBanner(): void {
    this.retryWinner = null;
    this.query(".banner").classList.add("hidden");
  }
}
