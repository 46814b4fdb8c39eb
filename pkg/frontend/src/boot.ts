/** Browser entry point: mounts the app on #app, reading the service
 * origin and initial user from data attributes. */

import { mount } from "./main.js";

const root = document.getElementById("app");
if (root !== null) {
  mount(
    root,
    root.dataset["api"] ?? "http://127.0.0.1:8765",
    root.dataset["user"] ?? "owner",
  );
}
