import { imageAvailable, mapUrl, spectrumUrl } from "./api.js";
import { knownCities } from "./cities.js";
import type { MapMode } from "./types.js";

/** Result gallery: preference spectrum plus one pixel map per requested
 * city, in generic or rater-specific mode. The server renders everything;
 * this screen only chooses which PNG to ask for. */
export class GalleryScreen {
  private mode: MapMode = "generic";
  private city = "";
  private op: Promise<void> = Promise.resolve();

  constructor(private readonly root: HTMLElement) {
    const options = knownCities()
      .map((c) => `<option value="${c}"></option>`)
      .join("");
    root.innerHTML = `
      <div class="gallery">
        <div class="gallery-controls">
          <label>City:
            <input class="city-input" list="city-options" placeholder="city id">
            <datalist id="city-options">${options}</datalist>
          </label>
          <button type="button" class="show-city">Show</button>
          <div class="mode-toggle">
            <label><input type="radio" name="mode" value="generic" checked> generic</label>
            <label><input type="radio" name="mode" value="specific"> specific</label>
          </div>
        </div>
        <p class="legend">Cold colors mark places this rater liked, warm colors places they disliked.</p>
        <section class="spectrum-panel">
          <h2>Preference spectrum</h2>
          <div class="spectrum-slot"></div>
        </section>
        <section class="map-panel">
          <h2>Pixel map</h2>
          <div class="map-slot"><p class="placeholder">Pick a city to see its map.</p></div>
        </section>
        <a class="survey-link" href="#survey">Back to the survey</a>
      </div>
    `;
    this.query(".show-city").addEventListener("click", () => {
      this.city = this.query<HTMLInputElement>(".city-input").value.trim();
      this.op = this.render();
    });
    this.query<HTMLInputElement>(".city-input").addEventListener("keydown", (event) => {
      if (event.key === "Enter") {
        this.city = this.query<HTMLInputElement>(".city-input").value.trim();
        this.op = this.render();
      }
    });
    for (const radio of root.querySelectorAll<HTMLInputElement>("input[name=mode]")) {
      radio.addEventListener("change", () => {
        if (radio.checked) {
          this.mode = radio.value as MapMode;
          this.op = this.render();
        }
      });
    }
  }

  start(): Promise<void> {
    this.op = this.render();
    return this.op;
  }

  whenIdle(): Promise<void> {
    return this.op;
  }

  dispose(): void {
    // no document-level listeners to unhook
  }

  private query<T extends HTMLElement = HTMLElement>(selector: string): T {
    const el = this.root.querySelector<T>(selector);
    if (!el) {
      throw new Error(`gallery screen lost its ${selector}`);
    }
    return el;
  }

  private async render(): Promise<void> {
    await Promise.all([
      this.renderSlot(this.query(".spectrum-slot"), spectrumUrl(this.mode), "preference spectrum"),
      this.renderMap(),
    ]);
  }

  private async renderMap(): Promise<void> {
    const slot = this.query(".map-slot");
    if (!this.city) {
      slot.innerHTML = `<p class="placeholder">Pick a city to see its map.</p>`;
      return;
    }
    await this.renderSlot(slot, mapUrl(this.city, this.mode), `${this.city} ${this.mode} map`);
  }

  /** Probe the URL first: a 404 means the pipeline stage behind it has not
   * run yet, which deserves a message rather than a broken image. */
  private async renderSlot(slot: HTMLElement, url: string, alt: string): Promise<void> {
    try {
      const available = await imageAvailable(url);
      slot.innerHTML = available
        ? `<img src="${url}" alt="${alt}">`
        : `<p class="not-computed">Not yet computed.</p>`;
    } catch {
      slot.innerHTML = `<p class="not-computed">Could not reach the survey service.</p>`;
    }
  }
}
