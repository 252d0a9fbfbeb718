/** Model badge: always mirrors the last server response, polls through retraining.

After a correction is accepted the badge shows the reported status; while it
says "retraining" the badge polls the model listing until the status moves,
then adopts the fresh version string.
*/

import { ModelListing, WireEnvelope } from "./types.js";

export interface BadgeState {
  model: string;
  version: string;
  status: string;
}

export type ListingFetcher = () => Promise<WireEnvelope<ModelListing>>;

export interface PollOptions {
  intervalMs?: number;
  maxAttempts?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class ModelBadge {
  private state: BadgeState;
  private listeners: Array<(state: BadgeState) => void> = [];

  constructor(model: string, version = "0", status = "ready") {
    this.state = { model, version, status };
  }

  current(): BadgeState {
    return { ...this.state };
  }

  onChange(listener: (state: BadgeState) => void): void {
    this.listeners.push(listener);
  }

  /** Adopt whatever the server last said, verbatim. */
  update(partial: Partial<BadgeState>): BadgeState {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) {
      listener(this.current());
    }
    return this.current();
  }

  /**
   * Poll the listing until the status leaves "retraining" (or attempts run
   * out), updating the badge on every observation. Resolves to the final
   * state.
   */
  async pollWhileRetraining(fetchListing: ListingFetcher, opts: PollOptions = {}): Promise<BadgeState> {
    const interval = opts.intervalMs ?? 500;
    const maxAttempts = opts.maxAttempts ?? 60;
    const sleep = opts.sleep ?? defaultSleep;
    let attempts = 0;
    while (this.state.status === "retraining" && attempts < maxAttempts) {
      const envelope = await fetchListing();
      const row = envelope.data.find((entry) => entry.model === this.state.model);
      this.update({
        status: envelope.status,
        ...(row ? { version: row.version } : {}),
      });
      if (this.state.status !== "retraining") {
        break;
      }
      attempts += 1;
      await sleep(interval);
    }
    return this.current();
  }
}
