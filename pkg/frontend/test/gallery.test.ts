import { afterEach, beforeEach, describe, expect, it } from "vitest";
import { GalleryScreen } from "../src/gallery.js";
import { rememberCity } from "../src/cities.js";
import { FakeService } from "./fake_service.js";

let service: FakeService;
let root: HTMLElement;
let screen: GalleryScreen;

async function showCity(city: string): Promise<void> {
  root.querySelector<HTMLInputElement>(".city-input")!.value = city;
  root.querySelector<HTMLButtonElement>(".show-city")!.click();
  await screen.whenIdle();
}

async function setMode(mode: string): Promise<void> {
  const radio = root.querySelector<HTMLInputElement>(`input[value="${mode}"]`)!;
  radio.checked = true;
  radio.dispatchEvent(new Event("change"));
  await screen.whenIdle();
}

beforeEach(async () => {
  service = new FakeService(2);
  service.install();
  rememberCity("alpha/000000#sv");
  rememberCity("beta/000001#sv");
  root = document.createElement("div");
  document.body.appendChild(root);
  screen = new GalleryScreen(root);
  await screen.start();
});

afterEach(() => {
  screen.dispose();
  document.body.innerHTML = "";
});

describe("gallery screen", () => {
  it("shows the computed spectrum and asks for a city before any map", () => {
    expect(root.querySelector(".spectrum-slot img")?.getAttribute("src")).toBe("/api/spectrum/generic");
    expect(root.querySelector(".map-slot .placeholder")).toBeTruthy();
  });

  it("explains the color legend without computing any label itself", () => {
    const legend = root.querySelector(".legend")?.textContent ?? "";
    expect(legend).toContain("liked");
    expect(legend).toContain("disliked");
    expect(legend.toLowerCase()).toContain("cold");
    expect(legend.toLowerCase()).toContain("warm");
  });

  it("suggests cities seen in this session's pair image ids", () => {
    const options = [...root.querySelectorAll("#city-options option")].map((o) => o.getAttribute("value"));
    expect(options).toEqual(["alpha", "beta"]);
  });

  it("loads the selected city's map", async () => {
    await showCity("alpha");
    expect(root.querySelector(".map-slot img")?.getAttribute("src")).toBe("/api/maps/alpha/generic");
  });

  it("reports maps the pipeline has not produced yet instead of a broken image", async () => {
    await showCity("atlantis");
    expect(root.querySelector(".map-slot img")).toBeNull();
    expect(root.querySelector(".map-slot .not-computed")?.textContent).toContain("Not yet computed");
  });

  it("switches both panels when the mode toggle changes", async () => {
    await showCity("alpha");
    await setMode("specific");

    expect(root.querySelector(".spectrum-slot .not-computed")).toBeTruthy();
    expect(root.querySelector(".map-slot .not-computed")).toBeTruthy();

    service.computed.add("/api/spectrum/specific");
    service.computed.add("/api/maps/alpha/specific");
    await setMode("generic");
    await setMode("specific");

    expect(root.querySelector(".spectrum-slot img")?.getAttribute("src")).toBe("/api/spectrum/specific");
    expect(root.querySelector(".map-slot img")?.getAttribute("src")).toBe("/api/maps/alpha/specific");
  });

  it("encodes the city name in the map url", async () => {
    service.computed.add("/api/maps/san%20miguel/generic");
    await showCity("san miguel");
    expect(root.querySelector(".map-slot img")?.getAttribute("src")).toBe("/api/maps/san%20miguel/generic");
  });
});
