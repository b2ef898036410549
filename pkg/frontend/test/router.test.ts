import { describe, expect, it } from "vitest";
import { FakeService } from "./fake_service.js";

async function settle(): Promise<void> {
  for (let i = 0; i < 5; i++) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

describe("router", () => {
  it("mounts the survey by default and swaps to the gallery on #gallery", async () => {
    const service = new FakeService(3);
    service.install();
    document.body.innerHTML = `<div id="app"></div>`;

    await import("../src/main.js");
    await settle();
    expect(document.querySelector(".stage .pair")).toBeTruthy();

    window.location.hash = "#gallery";
    window.dispatchEvent(new HashChangeEvent("hashchange"));
    await settle();
    expect(document.querySelector(".gallery")).toBeTruthy();
    expect(document.querySelector(".stage")).toBeNull();

    // keyboard listener from the survey screen must be gone
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowLeft" }));
    await settle();
    expect(service.log.length).toBe(0);
  });
});
