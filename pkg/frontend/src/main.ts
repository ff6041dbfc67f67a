/** Console entry point: build the store, resume the wizard, start polling. */

import { ApiClient } from "./api.js";
import { SessionStore } from "./state.js";
import { render } from "./ui.js";
import { SignupWizard } from "./wizard.js";

const POLL_INTERVAL_MS = 1500;

async function start(): Promise<void> {
  const api = new ApiClient("");
  const store = new SessionStore(api);
  const wizard = new SignupWizard(api);
  store.subscribe(() => render(store, wizard));
  await store.refresh();
  wizard.resume(store.identity);
  render(store, wizard);
  setInterval(() => void store.poll(), POLL_INTERVAL_MS);
}

void start();
