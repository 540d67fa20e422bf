/**
 * DOM views for the study: trial screen, questionnaire, rest countdown.
 *
 * Views render exactly what the service returns — no pressure decisions,
 * no correctness computation. The trial view owns the RT clock (started at
 * first paint) and the pressure-bar animation (driven by the shared fill
 * contract).
 */

import { Phase, QuestionnaireAnswers, TrialStub } from "./api.js";
import { DEFAULT_FILL, FillConfig, fillUnitsAt } from "./fill.js";
import { NowFn, ResponseTimer } from "./timer.js";

export interface TrialAnswer {
  answer: boolean;
  rtMs: number;
}

export class TrialView {
  private readonly timer: ResponseTimer;
  private readonly trialStartMs: number;
  private answered = false;
  private resolveAnswer!: (a: TrialAnswer) => void;
  /** Resolves with the participant's answer and measured RT. */
  readonly answerPromise: Promise<TrialAnswer>;
  private readonly keyHandler = (e: KeyboardEvent) => this.onKey(e);
  private readonly now: NowFn;

  constructor(
    private readonly root: HTMLElement,
    trial: TrialStub,
    now: NowFn = () => performance.now(),
    private readonly fill: FillConfig = DEFAULT_FILL,
  ) {
    this.now = now;
    this.timer = new ResponseTimer(now);
    this.answerPromise = new Promise((resolve) => {
      this.resolveAnswer = resolve;
    });

    this.root.innerHTML = "";
    const container = document.createElement("div");
    container.className = "trial";

    const progress = document.createElement("div");
    progress.className = "trial-progress";
    progress.textContent = `Trial ${trial.trial_index + 1} / ${trial.trials_in_phase}`;
    container.appendChild(progress);

    if (trial.pressure) {
      const bar = document.createElement("div");
      bar.className = "pressure-bar";
      for (let i = 0; i < this.fill.units; i++) {
        const unit = document.createElement("span");
        unit.className = "pressure-unit";
        bar.appendChild(unit);
      }
      container.appendChild(bar);
    }

    const question = document.createElement("div");
    question.className = "question";
    question.textContent = trial.question;
    container.appendChild(question);

    const buttons = document.createElement("div");
    buttons.className = "answer-buttons";
    for (const value of [true, false]) {
      const btn = document.createElement("button");
      btn.className = value ? "answer-true" : "answer-false";
      btn.textContent = value ? "True" : "False";
      btn.addEventListener("click", () => this.submit(value));
      buttons.appendChild(btn);
    }
    container.appendChild(buttons);

    this.root.appendChild(container);
    document.addEventListener("keydown", this.keyHandler);
    // First paint: the DOM is populated and visible from here on.
    this.timer.start();
    this.trialStartMs = this.now();
    this.updateBar();
  }

  /** Advance the pressure-bar animation; call on every animation frame. */
  updateBar(): void {
    const bar = this.root.querySelector(".pressure-bar");
    if (!bar) return;
    const elapsedS = (this.now() - this.trialStartMs) / 1000;
    const lit = fillUnitsAt(elapsedS, this.fill);
    bar.querySelectorAll(".pressure-unit").forEach((unit, i) => {
      unit.classList.toggle("lit", i < lit);
    });
  }

  /** Units currently lit (0 when the bar is absent). */
  litUnits(): number {
    return this.root.querySelectorAll(".pressure-unit.lit").length;
  }

  hasBar(): boolean {
    return this.root.querySelector(".pressure-bar") !== null;
  }

  private onKey(e: KeyboardEvent): void {
    // Keyboard mirrors the buttons: left = True, right = False.
    if (e.key === "ArrowLeft") this.submit(true);
    else if (e.key === "ArrowRight") this.submit(false);
  }

  private submit(answer: boolean): void {
    if (this.answered) return; // second press ignored
    this.answered = true;
    const rtMs = this.timer.stop();
    this.root.querySelectorAll("button").forEach((b) => (b.disabled = true));
    document.removeEventListener("keydown", this.keyHandler);
    this.resolveAnswer({ answer, rtMs });
  }
}

export class QuestionnaireView {
  private readonly selections: { attention: number | null; anxiety: number | null } = {
    attention: null,
    anxiety: null,
  };
  private resolveAnswers!: (a: QuestionnaireAnswers) => void;
  readonly answersPromise: Promise<QuestionnaireAnswers>;

  constructor(private readonly root: HTMLElement) {
    this.answersPromise = new Promise((resolve) => {
      this.resolveAnswers = resolve;
    });
    this.root.innerHTML = "";
    const form = document.createElement("form");
    form.className = "questionnaire";
    this.addScale(form, "attention", "How much attention did you pay to the progress bar?");
    this.addScale(form, "anxiety", "How anxious did the progress bar make you feel?");

    const submit = document.createElement("button");
    submit.type = "submit";
    submit.className = "questionnaire-submit";
    submit.textContent = "Submit";
    submit.disabled = true;
    form.appendChild(submit);
    form.addEventListener("submit", (e) => {
      e.preventDefault();
      if (this.selections.attention !== null && this.selections.anxiety !== null) {
        this.resolveAnswers({
          attention: this.selections.attention,
          anxiety: this.selections.anxiety,
        });
      }
    });
    this.root.appendChild(form);
  }

  private addScale(form: HTMLFormElement, name: "attention" | "anxiety", label: string): void {
    const fieldset = document.createElement("fieldset");
    fieldset.className = `scale scale-${name}`;
    const legend = document.createElement("legend");
    legend.textContent = label;
    fieldset.appendChild(legend);
    for (let v = 1; v <= 7; v++) {
      const lab = document.createElement("label");
      const input = document.createElement("input");
      input.type = "radio";
      input.name = name;
      input.value = String(v);
      input.addEventListener("change", () => {
        this.selections[name] = v;
        this.refreshSubmit(form);
      });
      lab.appendChild(input);
      lab.appendChild(document.createTextNode(String(v)));
      fieldset.appendChild(lab);
    }
    form.appendChild(fieldset);
  }

  private refreshSubmit(form: HTMLFormElement): void {
    const submit = form.querySelector<HTMLButtonElement>(".questionnaire-submit");
    if (submit) {
      submit.disabled = this.selections.attention === null || this.selections.anxiety === null;
    }
  }
}

export class RestView {
  constructor(root: HTMLElement, remainingS: number) {
    root.innerHTML = "";
    const div = document.createElement("div");
    div.className = "rest";
    const countdown = document.createElement("div");
    countdown.className = "rest-countdown";
    countdown.textContent = formatCountdown(remainingS);
    div.appendChild(countdown);
    const note = document.createElement("p");
    note.textContent = "Take a short rest. The study continues automatically.";
    div.appendChild(note);
    root.appendChild(div);
  }
}

export function formatCountdown(remainingS: number): string {
  const s = Math.max(0, Math.ceil(remainingS));
  const mm = String(Math.floor(s / 60)).padStart(2, "0");
  const ss = String(s % 60).padStart(2, "0");
  return `${mm}:${ss}`;
}

/** Feedback flash shown after practice1 answers (the only phase with feedback). */
export function renderPracticeFeedback(root: HTMLElement, correct: boolean): void {
  const flash = document.createElement("div");
  flash.className = `feedback ${correct ? "feedback-correct" : "feedback-wrong"}`;
  flash.textContent = correct ? "Correct" : "Wrong";
  root.appendChild(flash);
}

export function renderDone(root: HTMLElement, phase: Phase): void {
  root.innerHTML = "";
  const div = document.createElement("div");
  div.className = "done";
  div.textContent = phase === "done" ? "Session complete — thank you!" : `Phase: ${phase}`;
  root.appendChild(div);
}
