/**
 * Response-time clock.
 *
 * The clock starts at first paint (not at fetch completion): the relevant
 * moment is when the participant can actually see the question. The time
 * source is injectable so unit tests can use a fake; in the browser it is
 * `performance.now()`, which is monotonic and unaffected by wall-clock
 * adjustments.
 */

export type NowFn = () => number;

export class ResponseTimer {
  private startMs: number | null = null;

  constructor(private readonly now: NowFn = () => performance.now()) {}

  /** Call when the trial becomes visible. Restarts on each call. */
  start(): void {
    this.startMs = this.now();
  }

  get running(): boolean {
    return this.startMs !== null;
  }

  /** Milliseconds since start(); throws if the clock was never started. */
  elapsedMs(): number {
    if (this.startMs === null) {
      throw new Error("ResponseTimer.elapsedMs() before start()");
    }
    return this.now() - this.startMs;
  }

  /** Stop and return the elapsed time; subsequent reads require start(). */
  stop(): number {
    const ms = this.elapsedMs();
    this.startMs = null;
    return ms;
  }
}
