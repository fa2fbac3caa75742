import { ApiClient } from "./api.js";
import { AnnotatorApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const params = new URLSearchParams(window.location.search);
  const raterId = params.get("rater");
  const apiBase = params.get("api") ?? "";
  if (!raterId) {
    root.textContent = "Missing ?rater=<id> in the URL.";
  } else {
    void new AnnotatorApp(root, new ApiClient(apiBase), raterId).start();
  }
}
