/**
 * Programmatic session driver over the study API.
 *
 * Runs the full phase graph (practice blocks, rests, two 100-trial test
 * blocks, questionnaires) for a pluggable responder. The browser app uses
 * the same flow with a human as the responder; the scripted auto-responder
 * variant drives calibration and smoke tests.
 */

import { ApiError, Phase, QuestionnaireAnswers, StudyApi, TrialStub } from "./api.js";

export interface TrialResponder {
  /** Produce the answer and the measured response time for one trial. */
  respond(trial: TrialStub): Promise<{ answer: boolean; rtMs: number }>;
}

export interface QuestionnaireResponder {
  respond(phase: Phase): Promise<QuestionnaireAnswers>;
}

export type SleepFn = (ms: number) => Promise<void>;

const realSleep: SleepFn = (ms) => new Promise((resolve) => setTimeout(resolve, ms));

export interface DriverEvents {
  onPhase?(phase: Phase): void;
  onTrial?(trial: TrialStub): void;
  onRest?(remainingS: number): void;
}

export class SessionDriver {
  constructor(
    private readonly api: StudyApi,
    private readonly sessionId: string,
    private readonly sleep: SleepFn = realSleep,
    private readonly events: DriverEvents = {},
  ) {}

  /**
   * Run until the service reports phase "done". Rests are honored by
   * waiting out the service's Retry-After hint, so the driver works at any
   * rest scale without knowing the configured durations.
   */
  async run(trials: TrialResponder, questionnaires: QuestionnaireResponder): Promise<void> {
    let phase = (await this.api.state(this.sessionId)).phase;
    this.events.onPhase?.(phase);
    while (phase !== "done") {
      if (phase === "questionnaire1" || phase === "questionnaire2") {
        const answers = await questionnaires.respond(phase);
        phase = (await this.api.submitQuestionnaire(this.sessionId, answers)).phase;
      } else {
        phase = await this.stepTrialOrRest(trials);
      }
      this.events.onPhase?.(phase);
    }
  }

  private async stepTrialOrRest(trials: TrialResponder): Promise<Phase> {
    let trial: TrialStub;
    try {
      trial = await this.api.nextTrial(this.sessionId);
    } catch (err) {
      if (err instanceof ApiError && err.isRestInProgress) {
        const waitS = err.retryAfterS ?? 0.5;
        this.events.onRest?.(waitS);
        await this.sleep(waitS * 1000);
        return (await this.api.state(this.sessionId)).phase;
      }
      throw err;
    }
    this.events.onTrial?.(trial);
    const { answer, rtMs } = await trials.respond(trial);
    const res = await this.api.submitAnswer(this.sessionId, answer, rtMs);
    return res.next_phase;
  }
}

/**
 * Scripted responder that waits a fixed interval and measures its own
 * response time with the injected clock — the calibration harness for the
 * UI's RT measurement path.
 */
export class AutoResponder implements TrialResponder {
  readonly measuredMs: number[] = [];

  constructor(
    private readonly delayMs: number,
    private readonly now: () => number = () => performance.now(),
    private readonly sleep: SleepFn = realSleep,
    private readonly answer: (trial: TrialStub) => boolean = () => true,
  ) {}

  async respond(trial: TrialStub): Promise<{ answer: boolean; rtMs: number }> {
    const t0 = this.now();
    await this.sleep(this.delayMs);
    const rtMs = this.now() - t0;
    this.measuredMs.push(rtMs);
    return { answer: this.answer(trial), rtMs };
  }
}

export class FixedQuestionnaire implements QuestionnaireResponder {
  constructor(private readonly answers: QuestionnaireAnswers = { attention: 4, anxiety: 4 }) {}

  respond(): Promise<QuestionnaireAnswers> {
    return Promise.resolve(this.answers);
  }
}
