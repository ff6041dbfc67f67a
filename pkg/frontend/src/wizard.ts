/**
 * Signup wizard state machine.
 *
 * Five screens, in order: welcome, digital identity (display name), private
 * key (generated node-side; the UI only confirms), certificate request
 * (submitted to the node), confirmation (pending until an admin approves).
 * The wizard never touches key material — the node service generates and
 * stores it; the UI sees only the signing-request block.
 */

import { ApiClient, IdentityInfo } from "./api.js";

export type WizardStep =
  | "welcome"
  | "identity"
  | "key"
  | "request"
  | "confirmation";

export const WIZARD_ORDER: WizardStep[] = [
  "welcome",
  "identity",
  "key",
  "request",
  "confirmation",
];

export class SignupWizard {
  step: WizardStep = "welcome";
  displayName = "";
  requestId: string | null = null;
  requestBlock: string | null = null;
  error: string | null = null;

  constructor(private readonly api: ApiClient) {}

  /** Resume from the node's view: a pending request re-enters at the
   * confirmation screen; an active identity needs no wizard at all. */
  resume(identity: IdentityInfo): void {
    if (identity.status === "pending") {
      this.step = "confirmation";
      this.requestId = identity.request_id ?? null;
    } else if (identity.status === "none") {
      this.step = "welcome";
    }
  }

  get stepIndex(): number {
    return WIZARD_ORDER.indexOf(this.step);
  }

  /** Advance one screen; the request screen performs the API call and only
   * moves on when the node accepted it. */
  async next(): Promise<WizardStep> {
    this.error = null;
    switch (this.step) {
      case "welcome":
        this.step = "identity";
        break;
      case "identity":
        if (!this.displayName.trim()) {
          this.error = "A display name is required.";
          break;
        }
        this.step = "key";
        break;
      case "key":
        this.step = "request";
        break;
      case "request":
        try {
          const out = await this.api.requestIdentity(this.displayName.trim());
          this.requestId = out.request_id;
          this.requestBlock = out.block;
          this.step = "confirmation";
        } catch (err) {
          this.error = err instanceof Error ? err.message : String(err);
        }
        break;
      case "confirmation":
        break;
    }
    return this.step;
  }

  /** Paste-in import of the approved chain block on the confirmation
   * screen; the node validates it against the locally held key. */
  async importChain(chainBlock: string): Promise<boolean> {
    this.error = null;
    try {
      await this.api.importChain(chainBlock.trim());
      return true;
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
      return false;
    }
  }
}
