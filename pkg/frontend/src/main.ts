import { ApiClient } from "./api.js";
import { SessionStore } from "./store.js";
import { ConsoleView } from "./view.js";

const api = new ApiClient("");
const store = new SessionStore(api);

const view = new ConsoleView(document, {
  onStart: (caption) => {
    void store.start(caption);
  },
  onAnswer: (text) => {
    void store.answer(text).then((ok) => {
      if (ok) {
        view.clearAnswerInput();
      }
    });
  },
  onEnd: () => {
    void store.end();
  },
  onRetry: () => {
    void store.refresh();
  },
});

store.subscribe((state) => view.render(state));

// Reloading with #<session-id> in the URL restores the session view
// straight from the service; the client keeps no other state.
const fromHash = window.location.hash.slice(1);
if (fromHash) {
  void store.refresh(fromHash);
}
store.subscribe((state) => {
  if (state.sessionId) {
    window.location.hash = state.sessionId;
  }
});
