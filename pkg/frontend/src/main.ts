import { ServiceClient } from "./api.js";
import { Explorer } from "./ui.js";

function serviceBase(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("api") ?? "http://127.0.0.1:8000";
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const explorer = new Explorer(root, new ServiceClient(serviceBase()));
  await explorer.init();
  const query = window.location.search.replace(/^\?/, "");
  if (query.includes("label") || query.includes("s=")) {
    explorer.applyQuery(query);
  }
}

window.addEventListener("DOMContentLoaded", () => void boot());
