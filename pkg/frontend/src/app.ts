/**
 * Browser entry point: wires the views to the service for a live session.
 *
 * Flow per phase: trial phases render TrialView per trial; rest phases show
 * a countdown fed by the service's Retry-After hint; questionnaires render
 * the two 7-point scales. All sequencing decisions come from the service.
 */

import { ApiError, StudyApi, CreateSessionRequest, Group, Order } from "./api.js";
import { QuestionnaireView, RestView, TrialView, renderDone, renderPracticeFeedback } from "./ui.js";

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export interface AppConfig {
  baseUrl: string;
  participant: string;
  group: Group;
  order: Order;
  seed?: number;
}

export async function runStudy(root: HTMLElement, cfg: AppConfig): Promise<void> {
  const api = new StudyApi(cfg.baseUrl);
  const req: CreateSessionRequest = {
    participant: cfg.participant,
    group: cfg.group,
    order: cfg.order,
    seed: cfg.seed ?? 0,
  };
  const created = await api.createSession(req);
  const sid = created.session_id;

  let phase = created.phase;
  while (phase !== "done") {
    if (phase === "questionnaire1" || phase === "questionnaire2") {
      const view = new QuestionnaireView(root);
      const answers = await view.answersPromise;
      phase = (await api.submitQuestionnaire(sid, answers)).phase;
      continue;
    }
    try {
      const trial = await api.nextTrial(sid);
      const view = new TrialView(root, trial);
      const raf = window.setInterval(() => view.updateBar(), 100);
      const { answer, rtMs } = await view.answerPromise;
      window.clearInterval(raf);
      const res = await api.submitAnswer(sid, answer, rtMs);
      if (res.correct !== undefined) {
        renderPracticeFeedback(root, res.correct);
        await sleep(400);
      }
      phase = res.next_phase;
    } catch (err) {
      if (err instanceof ApiError && err.isRestInProgress) {
        const waitS = err.retryAfterS ?? 1;
        new RestView(root, waitS);
        await sleep(waitS * 1000);
        phase = (await api.state(sid)).phase;
      } else {
        throw err;
      }
    }
  }
  renderDone(root, phase);
}
