import { describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { SignupWizard, WIZARD_ORDER } from "../src/wizard.js";

function apiStub(overrides: Partial<Record<string, unknown>> = {}): ApiClient {
  const api = new ApiClient("http://test", vi.fn() as never);
  Object.assign(api, overrides);
  return api;
}

describe("signup wizard", () => {
  it("walks the five screens in order", async () => {
    const requestIdentity = vi.fn().mockResolvedValue({
      request_id: "r1",
      block: "-----BEGIN-----\nabc\n-----END-----",
      status: "pending",
    });
    const wizard = new SignupWizard(apiStub({ requestIdentity }));

    expect(WIZARD_ORDER).toEqual([
      "welcome",
      "identity",
      "key",
      "request",
      "confirmation",
    ]);
    expect(wizard.step).toBe("welcome");
    await wizard.next();
    expect(wizard.step).toBe("identity");
    wizard.displayName = "Res Q.";
    await wizard.next();
    expect(wizard.step).toBe("key");
    await wizard.next();
    expect(wizard.step).toBe("request");
    await wizard.next();
    expect(wizard.step).toBe("confirmation");
    expect(requestIdentity).toHaveBeenCalledWith("Res Q.");
    expect(wizard.requestId).toBe("r1");
    expect(wizard.requestBlock).toContain("BEGIN");
  });

  it("requires a display name before leaving the identity screen", async () => {
    const wizard = new SignupWizard(apiStub());
    await wizard.next();
    await wizard.next(); // no name entered
    expect(wizard.step).toBe("identity");
    expect(wizard.error).toMatch(/display name/i);
  });

  it("surfaces API failures on the request screen", async () => {
    const requestIdentity = vi
      .fn()
      .mockRejectedValue(new Error("identity already active"));
    const wizard = new SignupWizard(apiStub({ requestIdentity }));
    wizard.displayName = "X";
    wizard.step = "request";
    await wizard.next();
    expect(wizard.step).toBe("request");
    expect(wizard.error).toContain("identity already active");
  });

  it("resumes at the confirmation screen with a pending request", () => {
    const wizard = new SignupWizard(apiStub());
    wizard.resume({ status: "pending", request_id: "r9" });
    expect(wizard.step).toBe("confirmation");
    expect(wizard.requestId).toBe("r9");
  });

  it("imports an approved chain through the node API", async () => {
    const importChain = vi.fn().mockResolvedValue({ status: "active" });
    const wizard = new SignupWizard(apiStub({ importChain }));
    expect(await wizard.importChain("  block  ")).toBe(true);
    expect(importChain).toHaveBeenCalledWith("block");
  });
});
