/**
 * Typed client for the node's JSON-over-HTTP API.
 *
 * The console performs no cryptography: every verdict, chain, and identity
 * state shown in the UI comes from these endpoints.
 */

export interface NodeStatus {
  node_id: number;
  name: string;
  zipcode: string;
  identity: "none" | "pending" | "active";
  mesh_available: boolean;
  cellular_available: boolean;
  active_path: string;
  queued: number;
}

export interface NearbyNode {
  node_id: number;
  last_heard_s: number;
}

export interface NodeEvent {
  seq: number;
  kind: string;
  [key: string]: unknown;
}

export interface EventsPage {
  events: NodeEvent[];
  cursor: number;
}

export interface IdentityInfo {
  status: "none" | "pending" | "active";
  request_id?: string;
  name?: string;
  fingerprint?: string;
  roles?: string[];
  zipcode_scope?: string | null;
  official_lineage?: boolean;
}

export interface SigningRequestOut {
  request_id: string;
  block: string;
  status: string;
}

export interface PendingRequest {
  request_id: string;
  subject: string;
  status: string;
}

export interface Verdict {
  authentic: boolean;
  failed_step: number | null;
  reason: string | null;
}

export interface MessageView {
  message_id: string;
  date_ms: number;
  date: string;
  content: string;
  scope: { kind: string; target: string };
  official: boolean;
  sender_fingerprint: string;
  sender_name: string | null;
  sender_roles: string[];
  verdict?: Verdict;
  flagged?: boolean;
}

export interface CommunityMessages {
  zipcode: string;
  messages: MessageView[];
  quarantine?: MessageView[];
}

export interface CertSummary {
  name: string;
  serial?: string;
  roles?: string[];
  zipcode_scope?: string | null;
  fingerprint?: string;
}

export interface ChainDetail {
  leaf: CertSummary;
  intermediary: CertSummary;
  root: CertSummary;
}

export interface PostResult {
  message_id: string;
  path: string;
  queued: boolean;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = `${response.status} ${response.statusText}`;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  status(): Promise<NodeStatus> {
    return this.request("/api/status");
  }

  nearby(): Promise<{ nodes: NearbyNode[] }> {
    return this.request("/api/nearby");
  }

  events(since: number): Promise<EventsPage> {
    return this.request(`/api/events?since=${since}`);
  }

  identity(): Promise<IdentityInfo> {
    return this.request("/api/identity");
  }

  requestIdentity(displayName: string): Promise<SigningRequestOut> {
    return this.post("/api/identity/request", { display_name: displayName });
  }

  submitRequest(block: string): Promise<{ request_id: string }> {
    return this.post("/api/identity/submit", { block });
  }

  pendingRequests(): Promise<{ requests: PendingRequest[] }> {
    return this.request("/api/identity/requests");
  }

  approveRequest(
    requestId: string,
    options: { roles?: string[]; zipcode?: string; official?: boolean } = {},
  ): Promise<{ chain_block: string; serial: string }> {
    return this.post("/api/identity/approve", {
      request_id: requestId,
      ...options,
    });
  }

  rejectRequest(requestId: string, reason: string): Promise<{ ok: boolean }> {
    return this.post("/api/identity/reject", { request_id: requestId, reason });
  }

  revoke(serial: string, reason: string): Promise<{ ok: boolean }> {
    return this.post("/api/identity/revoke", { serial, reason });
  }

  importChain(chainBlock: string): Promise<{ status: string }> {
    return this.post("/api/identity/import", { chain_block: chainBlock });
  }

  chain(fingerprint: string): Promise<ChainDetail> {
    return this.request(`/api/identity/chain/${fingerprint}`);
  }

  communityMessages(
    zipcode: string,
    includeQuarantine = false,
  ): Promise<CommunityMessages> {
    const suffix = includeQuarantine ? "?include_quarantine=true" : "";
    return this.request(`/api/communities/${zipcode}/messages${suffix}`);
  }

  messageDetail(messageId: string): Promise<MessageView> {
    return this.request(`/api/messages/${messageId}`);
  }

  postCommunityMessage(
    zipcode: string,
    content: string,
    official = false,
  ): Promise<PostResult> {
    return this.post("/api/messages", { zipcode, content, official });
  }

  moderate(body: {
    action: "flag" | "hide" | "rate_limit";
    zipcode: string;
    message_id?: string;
    user_id?: string;
    rate_limit?: { window_s: number; max_messages: number };
  }): Promise<{ ok: boolean }> {
    return this.post("/api/moderation", body);
  }
}
