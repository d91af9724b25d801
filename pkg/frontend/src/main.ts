/** DOM wiring for the editing UI. All state lives in EditSession; this file
 * only translates between DOM events and session calls, and repaints panes
 * when the session view changes. */

import { ApiClient } from "./api.js";
import { drawPane, fileToB64Png } from "./render.js";
import { EditSession } from "./session.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const session = new EditSession(api);
  const info = await session.start();

  // attribute sliders, bounded by each attribute's served alpha_max
  const sliderBox = $("sliders");
  for (const spec of session.sliders) {
    const row = document.createElement("label");
    row.className = "slider-row";
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(spec.min);
    input.max = String(spec.max);
    input.step = String((spec.max - spec.min) / 200);
    input.value = "0";
    const label = document.createElement("span");
    const readout = document.createElement("code");
    label.textContent = spec.name;
    readout.textContent = "0";
    input.addEventListener("input", () => {
      session.setAlpha(spec.name, Number(input.value));
    });
    row.append(label, input, readout);
    row.dataset.attr = spec.name;
    sliderBox.append(row);
  }

  const betaSlider = $<HTMLInputElement>("beta");
  betaSlider.addEventListener("input", () => {
    session.setBeta(Number(betaSlider.value));
    $("beta-readout").textContent = betaSlider.value;
  });

  $<HTMLInputElement>("upload").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) await session.selectSource(await fileToB64Png(file));
  });
  $<HTMLInputElement>("identity-upload").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) session.setIdentityTarget(await fileToB64Png(file));
  });

  // gallery strip: click to select as source, shift-click as identity target
  const gallery = await api.gallery();
  const strip = $("gallery");
  gallery.images.forEach((b64) => {
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${b64}`;
    img.className = "thumb";
    img.addEventListener("click", (ev) => {
      if (ev.shiftKey) session.setIdentityTarget(b64);
      else void session.selectSource(b64);
    });
    strip.append(img);
  });

  session.onChange((view) => {
    drawPane($("pane-original") as HTMLCanvasElement, view.original);
    drawPane($("pane-recon") as HTMLCanvasElement, view.reconstruction);
    drawPane($("pane-edited") as HTMLCanvasElement, view.edited);
    drawPane($("pane-interp") as HTMLCanvasElement, view.interpolated);

    const errBox = $("error");
    errBox.textContent = view.error ?? "";
    errBox.style.display = view.error ? "block" : "none";

    // displayed alphas come from server provenance, not local slider state
    if (view.provenance) {
      const served = new Map(view.provenance.attribute_edits);
      for (const row of sliderBox.querySelectorAll<HTMLElement>(".slider-row")) {
        const name = row.dataset.attr!;
        const readout = row.querySelector("code")!;
        readout.textContent = (served.get(name) ?? 0).toFixed(3);
      }
      // history strip repaint
      const hist = $("history");
      hist.textContent = "";
      session.history.forEach((entry, i) => {
        const img = document.createElement("img");
        img.src = `data:image/png;base64,${entry.image}`;
        img.className = "thumb";
        img.title = JSON.stringify(entry.provenance);
        img.addEventListener("click", () => {
          for (const row of sliderBox.querySelectorAll<HTMLElement>(".slider-row")) {
            const input = row.querySelector("input")!;
            input.value = String(entry.sliders[row.dataset.attr!] ?? 0);
          }
          session.restore(i);
        });
        hist.append(img);
      });
    }
  });

  $("retry").addEventListener("click", () => {
    // reissue the current state after a service error
    for (const spec of session.sliders) {
      session.setAlpha(spec.name, session.getAlpha(spec.name));
      break;
    }
  });

  $("model-info").textContent =
    `${info.input_size}×${info.input_size}, f_t ${info.dims.f_t} / ` +
    `f_p ${info.dims.f_p} dims, checkpoint ${info.checkpoint.slice(0, 12)}…`;
}

boot().catch((err) => {
  document.body.insertAdjacentHTML(
    "beforeend",
    `<p class="fatal">service unreachable: ${String(err)}</p>`,
  );
});
