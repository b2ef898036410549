import { GalleryScreen } from "./gallery.js";
import { SurveyScreen } from "./survey.js";

interface Screen {
  start(): Promise<void>;
  dispose(): void;
}

function raterFromQuery(): string {
  const rater = new URLSearchParams(window.location.search).get("rater");
  return rater && rater.trim() ? rater.trim() : "me";
}

let active: Screen | null = null;

function route(): void {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app mount point");
  }
  active?.dispose();
  root.innerHTML = "";
  if (window.location.hash === "#gallery") {
    active = new GalleryScreen(root);
  } else {
    active = new SurveyScreen(root, raterFromQuery());
  }
  void active.start();
}

window.addEventListener("hashchange", route);
route();
