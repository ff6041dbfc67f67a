/**
 * DOM rendering. All state lives in the SessionStore; this module only
 * projects it into elements and wires user intent back to store methods.
 */

import { MessageView } from "./api.js";
import { SessionStore } from "./state.js";
import { SignupWizard, WIZARD_ORDER } from "./wizard.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderErrors(store: SessionStore): HTMLElement {
  const box = el("div", "errors");
  if (store.errors.length === 0) return box;
  for (const error of store.errors) box.appendChild(el("p", "error", error));
  const dismiss = el("button", "", "Dismiss");
  dismiss.onclick = () => store.dismissErrors();
  box.appendChild(dismiss);
  return box;
}

function renderStatusBar(store: SessionStore): HTMLElement {
  const bar = el("header", "status-bar");
  const s = store.status;
  if (!s) {
    bar.appendChild(el("span", "", "Connecting to node…"));
    return bar;
  }
  bar.appendChild(el("strong", "", s.name));
  bar.appendChild(el("span", "", `community ${store.zipcode}`));
  bar.appendChild(
    el("span", s.mesh_available ? "ok" : "down",
       s.mesh_available ? "mesh up" : "mesh down"),
  );
  bar.appendChild(
    el("span", s.cellular_available ? "ok" : "down",
       s.cellular_available ? "cellular up" : "cellular down"),
  );
  bar.appendChild(el("span", "", `path: ${s.active_path}`));
  bar.appendChild(el("span", "badge", `identity: ${store.identity.status}`));
  return bar;
}

function renderWizard(store: SessionStore, wizard: SignupWizard): HTMLElement {
  const panel = el("section", "wizard");
  panel.appendChild(el("h2", "", "Sign up"));
  const steps = el("ol", "steps");
  for (const step of WIZARD_ORDER) {
    const item = el("li", step === wizard.step ? "current" : "", step);
    steps.appendChild(item);
  }
  panel.appendChild(steps);

  const copy: Record<string, string> = {
    welcome:
      "Welcome. This node lets your community exchange signed messages " +
      "without internet or cellular coverage.",
    identity: "Choose the display name your neighbours will see.",
    key:
      "A private key has been prepared on this node. It never leaves the " +
      "node and the console never sees it.",
    request:
      "Submit a certificate signing request to your community " +
      "administrator.",
    confirmation:
      "Request submitted — waiting for an administrator to approve it. " +
      "Paste the approval block below if it was handed to you directly.",
  };
  panel.appendChild(el("p", "", copy[wizard.step]));

  if (wizard.step === "identity") {
    const input = el("input");
    input.placeholder = "Display name";
    input.value = wizard.displayName;
    input.oninput = () => (wizard.displayName = input.value);
    panel.appendChild(input);
  }
  if (wizard.step === "confirmation") {
    if (wizard.requestBlock) {
      const block = el("textarea", "block");
      block.readOnly = true;
      block.value = wizard.requestBlock;
      panel.appendChild(el("p", "", "Your signing request (give this to an admin):"));
      panel.appendChild(block);
    }
    const paste = el("textarea", "block");
    paste.placeholder = "Paste approved certificate chain block here";
    const importButton = el("button", "", "Import approval");
    importButton.onclick = async () => {
      if (await wizard.importChain(paste.value)) await store.refresh();
    };
    panel.appendChild(paste);
    panel.appendChild(importButton);
  } else {
    const nextButton = el("button", "", "Continue");
    nextButton.onclick = async () => {
      await wizard.next();
      store.dismissErrors();
      render(store, wizard);
    };
    panel.appendChild(nextButton);
  }
  if (wizard.error) panel.appendChild(el("p", "error", wizard.error));
  return panel;
}

function renderMessage(store: SessionStore, message: MessageView): HTMLElement {
  const item = el("article", "message");
  const head = el("div", "message-head");
  head.appendChild(
    el("strong", "", message.sender_name ?? message.sender_fingerprint.slice(0, 8)),
  );
  if (message.official) head.appendChild(el("span", "official", "OFFICIAL"));
  if (message.verdict) {
    head.appendChild(
      el(
        "span",
        message.verdict.authentic ? "verdict ok" : "verdict bad",
        message.verdict.authentic ? "Authentic" : "Rejected",
      ),
    );
  }
  head.appendChild(el("time", "", new Date(message.date_ms).toLocaleString()));
  item.appendChild(head);
  item.appendChild(el("p", "", message.content));

  const actions = el("div", "message-actions");
  const details = el("button", "", "Details");
  details.onclick = () => renderDetails(store, message);
  actions.appendChild(details);
  if (store.canModerate) {
    const hide = el("button", "", "Hide");
    hide.onclick = () => store.hideMessage(message.message_id);
    const flag = el("button", "", "Flag");
    flag.onclick = () => store.flagMessage(message.message_id);
    const limit = el("button", "", "Rate-limit sender");
    limit.onclick = () =>
      store.rateLimitUser(message.sender_fingerprint, 600, 5);
    actions.append(hide, flag, limit);
  }
  item.appendChild(actions);
  return item;
}

async function renderDetails(
  store: SessionStore,
  message: MessageView,
): Promise<void> {
  const host = document.getElementById("details");
  if (!host) return;
  host.replaceChildren(el("h3", "", "Message details"));
  const verdict = message.verdict;
  if (verdict) {
    host.appendChild(
      el(
        "p",
        verdict.authentic ? "verdict ok" : "verdict bad",
        verdict.authentic
          ? "Authentic — all three validation steps passed."
          : `Rejected at step ${verdict.failed_step}: ${verdict.reason}`,
      ),
    );
  }
  host.appendChild(el("p", "", `Scope: ${message.scope.kind} ${message.scope.target}`));
  host.appendChild(
    el("p", "", `Sender fingerprint: ${message.sender_fingerprint}`),
  );
  const chain = await store.chainFor(message.sender_fingerprint);
  if (chain) {
    const list = el("ul", "chain");
    list.appendChild(
      el("li", "", `leaf: ${chain.leaf.name} [${(chain.leaf.roles ?? []).join(", ")}]`),
    );
    list.appendChild(
      el("li", "",
         `intermediary: ${chain.intermediary.name} [${(chain.intermediary.roles ?? []).join(", ")}]`),
    );
    list.appendChild(el("li", "", `root: ${chain.root.name}`));
    host.appendChild(el("p", "", "Certificate chain:"));
    host.appendChild(list);
  } else {
    host.appendChild(el("p", "", "Sender chain not yet learned by this node."));
  }
}

function renderChat(store: SessionStore): HTMLElement {
  const panel = el("section", "chat");
  const heading = el("h2", "", `Community ${store.zipcode}`);
  panel.appendChild(heading);

  const picker = el("input");
  picker.value = store.zipcode;
  picker.placeholder = "zipcode";
  const go = el("button", "", "Switch");
  go.onclick = () => store.selectCommunity(picker.value.trim());
  panel.append(picker, go);

  const list = el("div", "message-list");
  for (const message of store.messages) {
    list.appendChild(renderMessage(store, message));
  }
  if (store.messages.length === 0) {
    list.appendChild(el("p", "muted", "No messages yet."));
  }
  panel.appendChild(list);

  const composer = el("div", "composer");
  const input = el("textarea");
  input.placeholder = store.canPost
    ? "Write a message…"
    : "Read-only: complete signup to post.";
  input.disabled = !store.canPost;
  const send = el("button", "", "Send");
  send.disabled = !store.canPost;
  const official = el("input");
  official.type = "checkbox";
  const officialLabel = el("label", "", " official");
  officialLabel.prepend(official);
  officialLabel.hidden = !store.identity.official_lineage;
  send.onclick = async () => {
    if (await store.post(input.value, official.checked)) input.value = "";
  };
  composer.append(input, officialLabel, send);
  panel.appendChild(composer);
  return panel;
}

function renderNearby(store: SessionStore): HTMLElement {
  const panel = el("section", "nearby");
  panel.appendChild(el("h3", "", "Nearby nodes"));
  const list = el("ul");
  for (const peer of store.nearby) {
    list.appendChild(
      el("li", "", `node ${peer.node_id} — heard ${peer.last_heard_s.toFixed(0)} s ago`),
    );
  }
  if (store.nearby.length === 0) list.appendChild(el("li", "muted", "none"));
  panel.appendChild(list);
  return panel;
}

function renderAdmin(store: SessionStore): HTMLElement {
  const panel = el("section", "admin");
  panel.appendChild(el("h3", "", "Pending signing requests"));
  const list = el("ul");
  for (const request of store.pendingRequests) {
    const item = el("li", "", `${request.subject} (${request.request_id.slice(0, 8)}) `);
    const approve = el("button", "", "Approve");
    approve.onclick = async () => {
      try {
        const out = await store.api.approveRequest(request.request_id, {
          zipcode: store.zipcode,
        });
        const block = el("textarea", "block");
        block.readOnly = true;
        block.value = out.chain_block;
        item.appendChild(el("span", "", " approved — hand this chain back:"));
        item.appendChild(block);
      } catch (err) {
        store.errors.push(err instanceof Error ? err.message : String(err));
      }
      await store.refresh();
    };
    const reject = el("button", "", "Reject");
    reject.onclick = async () => {
      await store.api.rejectRequest(request.request_id, "rejected by admin");
      await store.refresh();
    };
    item.append(approve, reject);
    list.appendChild(item);
  }
  if (store.pendingRequests.length === 0) {
    list.appendChild(el("li", "muted", "none"));
  }
  panel.appendChild(list);
  return panel;
}

export function render(store: SessionStore, wizard: SignupWizard): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.replaceChildren();
  root.appendChild(renderStatusBar(store));
  root.appendChild(renderErrors(store));
  const columns = el("main", "columns");
  const left = el("div", "col");
  if (store.identity.status !== "active") {
    left.appendChild(renderWizard(store, wizard));
  }
  left.appendChild(renderChat(store));
  const right = el("div", "col side");
  right.appendChild(renderNearby(store));
  if (store.isAdmin) right.appendChild(renderAdmin(store));
  const details = el("section");
  details.id = "details";
  right.appendChild(details);
  columns.append(left, right);
  root.appendChild(columns);
}
