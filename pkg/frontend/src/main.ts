/** Browser entry point. The API base URL comes from the #app element's
 * data-base-url attribute and defaults to same-origin. */

import { KgiClient } from "./api.js";
import { createApp } from "./app.js";

function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) {
    return;
  }
  const baseUrl = root.dataset.baseUrl ?? "";
  createApp(root, new KgiClient(baseUrl));
}

if (document.readyState === "loading") {
  document.addEventListener("DOMContentLoaded", bootstrap);
} else {
  bootstrap();
}
