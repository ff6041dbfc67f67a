/**
 * Session store: the single place UI state lives.
 *
 * Everything here is reproducible from API responses alone; the store keeps
 * no message state the node does not also hold. Live updates come from
 * polling the node's event cursor and re-fetching what changed.
 */

import {
  ApiClient,
  ApiError,
  ChainDetail,
  IdentityInfo,
  MessageView,
  NearbyNode,
  NodeStatus,
  PendingRequest,
} from "./api.js";

export type Listener = () => void;

export class SessionStore {
  status: NodeStatus | null = null;
  identity: IdentityInfo = { status: "none" };
  zipcode = "";
  messages: MessageView[] = [];
  quarantine: MessageView[] = [];
  nearby: NearbyNode[] = [];
  pendingRequests: PendingRequest[] = [];
  errors: string[] = [];
  cursor = 0;

  private listeners: Listener[] = [];

  constructor(readonly api: ApiClient) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** API failures are surfaced inline, never swallowed. */
  private fail(err: unknown): void {
    const text =
      err instanceof ApiError
        ? `${err.status}: ${err.message}`
        : err instanceof Error
          ? err.message
          : String(err);
    this.errors.push(text);
    this.notify();
  }

  dismissErrors(): void {
    this.errors = [];
    this.notify();
  }

  /** Posting is allowed only with an active identity (read-only mode
   * otherwise); the node enforces the same rule with a 403. */
  get canPost(): boolean {
    return this.identity.status === "active";
  }

  /** Moderator controls appear only for in-scope moderators; administrators
   * moderate anywhere. */
  get canModerate(): boolean {
    const roles = this.identity.roles ?? [];
    if (this.identity.status !== "active") return false;
    if (roles.includes("administrator")) return true;
    return (
      roles.includes("moderator") &&
      this.identity.zipcode_scope === this.zipcode
    );
  }

  get isAdmin(): boolean {
    return (this.identity.roles ?? []).includes("administrator");
  }

  async refresh(): Promise<void> {
    try {
      this.status = await this.api.status();
      this.identity = await this.api.identity();
      if (!this.zipcode) this.zipcode = this.status.zipcode;
      this.nearby = (await this.api.nearby()).nodes;
      if (this.isAdmin) {
        this.pendingRequests = (await this.api.pendingRequests()).requests;
      }
      await this.loadMessages();
    } catch (err) {
      this.fail(err);
    }
    this.notify();
  }

  async loadMessages(): Promise<void> {
    if (!this.zipcode) return;
    try {
      const page = await this.api.communityMessages(
        this.zipcode,
        this.canModerate,
      );
      this.messages = page.messages;
      this.quarantine = page.quarantine ?? [];
      this.notify();
    } catch (err) {
      this.fail(err);
    }
  }

  async selectCommunity(zipcode: string): Promise<void> {
    this.zipcode = zipcode;
    await this.loadMessages();
  }

  /** One poll step: fetch events past the cursor and re-sync any state the
   * events touch. Returns the number of events seen. */
  async poll(): Promise<number> {
    try {
      const page = await this.api.events(this.cursor);
      this.cursor = page.cursor;
      if (page.events.length === 0) return 0;
      const kinds = new Set(page.events.map((e) => e.kind));
      if (kinds.has("identity") || kinds.has("approval") ||
          kinds.has("request") || kinds.has("rejection")) {
        this.identity = await this.api.identity();
        if (this.isAdmin) {
          this.pendingRequests = (await this.api.pendingRequests()).requests;
        }
      }
      if (kinds.has("message") || kinds.has("moderation") ||
          kinds.has("revocation")) {
        await this.loadMessages();
      }
      this.notify();
      return page.events.length;
    } catch (err) {
      this.fail(err);
      return 0;
    }
  }

  async post(content: string, official = false): Promise<boolean> {
    if (!this.canPost) {
      this.fail(new Error("read-only session: complete signup to post"));
      return false;
    }
    try {
      await this.api.postCommunityMessage(this.zipcode, content, official);
      await this.loadMessages();
      return true;
    } catch (err) {
      this.fail(err);
      return false;
    }
  }

  async hideMessage(messageId: string): Promise<void> {
    try {
      await this.api.moderate({
        action: "hide",
        zipcode: this.zipcode,
        message_id: messageId,
      });
      await this.loadMessages();
    } catch (err) {
      this.fail(err);
    }
  }

  async flagMessage(messageId: string): Promise<void> {
    try {
      await this.api.moderate({
        action: "flag",
        zipcode: this.zipcode,
        message_id: messageId,
      });
      await this.loadMessages();
    } catch (err) {
      this.fail(err);
    }
  }

  async rateLimitUser(
    fingerprint: string,
    windowS: number,
    maxMessages: number,
  ): Promise<void> {
    try {
      await this.api.moderate({
        action: "rate_limit",
        zipcode: this.zipcode,
        user_id: fingerprint,
        rate_limit: { window_s: windowS, max_messages: maxMessages },
      });
    } catch (err) {
      this.fail(err);
    }
  }

  /** Chain detail for the message-details panel; null when the sender's
   * chain has not (yet) been learned by this node. */
  async chainFor(fingerprint: string): Promise<ChainDetail | null> {
    try {
      return await this.api.chain(fingerprint);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) return null;
      this.fail(err);
      return null;
    }
  }
}
