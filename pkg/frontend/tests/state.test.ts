import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { SessionStore } from "../src/state.js";

type Routes = Record<string, unknown>;

/** fetch stub serving canned JSON per path (query string stripped). */
function fetchFor(routes: Routes, failures: Record<string, number> = {}) {
  return vi.fn(async (url: string | URL) => {
    const path = String(url).replace("http://n", "").split("?")[0];
    if (path in failures) {
      return new Response(JSON.stringify({ detail: `refused ${path}` }), {
        status: failures[path],
      });
    }
    if (!(path in routes)) {
      return new Response(JSON.stringify({ detail: "not found" }), {
        status: 404,
      });
    }
    return new Response(JSON.stringify(routes[path]), { status: 200 });
  });
}

const baseRoutes: Routes = {
  "/api/status": {
    node_id: 1,
    name: "kiosk",
    zipcode: "8050",
    identity: "none",
    mesh_available: true,
    cellular_available: false,
    active_path: "mesh",
    queued: 0,
  },
  "/api/identity": { status: "none" },
  "/api/nearby": { nodes: [{ node_id: 2, last_heard_s: 4.2 }] },
  "/api/communities/8050/messages": { zipcode: "8050", messages: [] },
  "/api/events": { events: [], cursor: 0 },
};

function storeWith(routes: Routes, failures: Record<string, number> = {}) {
  const fetchImpl = fetchFor(routes, failures);
  const store = new SessionStore(new ApiClient("http://n", fetchImpl as never));
  return { store, fetchImpl };
}

describe("session store", () => {
  it("hydrates from the API and defaults to the node's community", async () => {
    const { store } = storeWith(baseRoutes);
    await store.refresh();
    expect(store.status?.name).toBe("kiosk");
    expect(store.zipcode).toBe("8050");
    expect(store.nearby).toHaveLength(1);
    expect(store.errors).toEqual([]);
  });

  it("is read-only without an active identity", async () => {
    const { store, fetchImpl } = storeWith(baseRoutes);
    await store.refresh();
    expect(store.canPost).toBe(false);
    expect(await store.post("hello")).toBe(false);
    expect(store.errors.join(" ")).toMatch(/read-only/i);
    // The guard fires client-side; no POST /api/messages went out.
    const posted = fetchImpl.mock.calls.filter(([u]) =>
      String(u).includes("/api/messages"),
    );
    expect(posted).toHaveLength(0);
  });

  it("surfaces server 403s inline instead of swallowing them", async () => {
    const routes = {
      ...baseRoutes,
      "/api/identity": { status: "active", name: "A", roles: ["authenticated"] },
    };
    const { store } = storeWith(routes, { "/api/messages": 403 });
    await store.refresh();
    expect(store.canPost).toBe(true);
    expect(await store.post("hi")).toBe(false);
    expect(store.errors.join(" ")).toContain("403");
  });

  it("shows moderator controls only in the moderator's own community", async () => {
    const routes = {
      ...baseRoutes,
      "/api/identity": {
        status: "active",
        name: "Mod",
        roles: ["authenticated", "moderator"],
        zipcode_scope: "8050",
      },
      "/api/communities/9999/messages": { zipcode: "9999", messages: [] },
    };
    const { store } = storeWith(routes);
    await store.refresh();
    expect(store.canModerate).toBe(true);
    await store.selectCommunity("9999");
    expect(store.canModerate).toBe(false);
  });

  it("administrators moderate anywhere", async () => {
    const routes = {
      ...baseRoutes,
      "/api/identity": {
        status: "active",
        name: "Admin",
        roles: ["administrator", "authenticated"],
      },
      "/api/identity/requests": { requests: [] },
      "/api/communities/9999/messages": { zipcode: "9999", messages: [] },
    };
    const { store } = storeWith(routes);
    await store.refresh();
    await store.selectCommunity("9999");
    expect(store.canModerate).toBe(true);
  });

  it("polling advances the cursor and re-syncs touched state", async () => {
    const routes: Routes = {
      ...baseRoutes,
      "/api/events": {
        events: [{ seq: 3, kind: "message" }],
        cursor: 3,
      },
    };
    const { store, fetchImpl } = storeWith(routes);
    await store.refresh();
    fetchImpl.mockClear();
    const seen = await store.poll();
    expect(seen).toBe(1);
    expect(store.cursor).toBe(3);
    const urls = fetchImpl.mock.calls.map(([u]) => String(u));
    expect(urls.some((u) => u.includes("/api/communities/8050/messages"))).toBe(
      true,
    );
  });

  it("an identity event refreshes identity without a reload", async () => {
    const routes: Routes = {
      ...baseRoutes,
      "/api/events": {
        events: [{ seq: 1, kind: "identity", status: "active" }],
        cursor: 1,
      },
    };
    const { store } = storeWith(routes);
    await store.refresh();
    expect(store.canPost).toBe(false);
    routes["/api/identity"] = {
      status: "active",
      name: "A",
      roles: ["authenticated"],
    };
    await store.poll();
    expect(store.canPost).toBe(true);
  });

  it("chainFor returns null for unknown fingerprints and no error", async () => {
    const { store } = storeWith(baseRoutes);
    await store.refresh();
    expect(await store.chainFor("ff".repeat(16))).toBeNull();
    expect(store.errors).toEqual([]);
  });

  it("keeps no message state beyond the API's answer", async () => {
    const routes: Routes = { ...baseRoutes };
    const { store } = storeWith(routes);
    await store.refresh();
    routes["/api/communities/8050/messages"] = {
      zipcode: "8050",
      messages: [
        {
          message_id: "aa",
          date_ms: 1,
          date: "",
          content: "x",
          scope: { kind: "community", target: "8050" },
          official: false,
          sender_fingerprint: "00",
          sender_name: "A",
          sender_roles: [],
        },
      ],
    };
    await store.loadMessages();
    expect(store.messages).toHaveLength(1);
    routes["/api/communities/8050/messages"] = {
      zipcode: "8050",
      messages: [],
    };
    await store.loadMessages();
    expect(store.messages).toHaveLength(0);
  });

  it("raises typed errors from the API client", async () => {
    const api = new ApiClient(
      "http://n",
      fetchFor({}, { "/api/status": 500 }) as never,
    );
    await expect(api.status()).rejects.toBeInstanceOf(ApiError);
  });
});
