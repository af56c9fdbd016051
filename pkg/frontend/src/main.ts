import { ApiClient } from "./api.js";
import { ViewerController } from "./controller.js";
import { CanvasViewport } from "./viewport.js";
import type { MapperInfo } from "./types.js";

const apiBase = (window as { SEMSHAPE_API?: string }).SEMSHAPE_API ?? "";
const api = new ApiClient(apiBase);

const byId = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;
const mapperSelect = byId<HTMLSelectElement>("mapper-select");
const sliderPanel = byId<HTMLDivElement>("sliders");
const toastBox = byId<HTMLDivElement>("toast");
const uploadInput = byId<HTMLInputElement>("upload");
const uploadLabel = byId<HTMLLabelElement>("upload-label");
const resetAllButton = byId<HTMLButtonElement>("reset-all");
const coeffReadout = byId<HTMLDivElement>("coeffs");

const viewport = new CanvasViewport(byId<HTMLCanvasElement>("viewport"));

let toastTimer: ReturnType<typeof setTimeout> | null = null;
function toast(message: string): void {
  toastBox.textContent = message;
  toastBox.classList.add("visible");
  if (toastTimer) clearTimeout(toastTimer);
  toastTimer = setTimeout(() => toastBox.classList.remove("visible"), 4000);
}

const controller = new ViewerController(api, viewport, {
  onToast: toast,
  onZeroShotAvailability: (enabled, reason) => {
    uploadInput.disabled = !enabled;
    uploadLabel.classList.toggle("disabled", !enabled);
    uploadLabel.title = enabled ? "Seed the sliders from a photo" : reason;
    if (!enabled) toast(`zero-shot disabled: ${reason}`);
  },
});

interface SliderRow {
  input: HTMLInputElement;
  badge: HTMLSpanElement;
  value: HTMLSpanElement;
}
let rows: SliderRow[] = [];

function renderCoefficients(): void {
  const xi = controller.sliderState.lastXi;
  coeffReadout.textContent = xi
    ? `xi = [${xi.map((v) => v.toFixed(3)).join(", ")}]`
    : "";
}

function syncRows(): void {
  const state = controller.sliderState;
  rows.forEach((row, i) => {
    row.input.value = String(state.uiValue(i));
    row.value.textContent = state.scoreOf(i).toFixed(3);
    row.badge.classList.toggle("visible", state.hasBadge(i));
  });
  renderCoefficients();
}

function buildSliderPanel(info: MapperInfo): void {
  sliderPanel.textContent = "";
  rows = info.descriptors.map((descriptor, index) => {
    const row = document.createElement("div");
    row.className = "slider-row";

    const label = document.createElement("label");
    label.textContent = descriptor.text;

    const badge = document.createElement("span");
    badge.className = "badge";
    badge.textContent = "out of range";
    label.appendChild(badge);

    const input = document.createElement("input");
    input.type = "range";
    input.min = "0";
    input.max = "1";
    input.step = "0.001";
    input.addEventListener("input", () => {
      controller.onSliderChange(index, Number(input.value));
      syncRows();
    });

    const value = document.createElement("span");
    value.className = "score-value";

    const reset = document.createElement("button");
    reset.textContent = "reset";
    reset.addEventListener("click", () => {
      controller.resetSlider(index);
      syncRows();
    });

    row.append(label, input, value, reset);
    sliderPanel.appendChild(row);
    return { input, badge, value };
  });
}

async function selectMapper(info: MapperInfo): Promise<void> {
  const topo = await api.topology(info.mapper_id);
  viewport.setTopology(topo.faces);
  await controller.selectMapper(info);
  buildSliderPanel(info);
  syncRows();
}

resetAllButton.addEventListener("click", () => {
  controller.resetAll();
  syncRows();
});

uploadInput.addEventListener("change", async () => {
  const file = uploadInput.files?.[0];
  if (!file) return;
  const seeded = await controller.onImageUpload(file, file.name);
  if (seeded) {
    syncRows();
    const clamped = seeded.clamped.filter(Boolean).length;
    if (clamped > 0) toast(`${clamped} score(s) outside the slider range were clamped`);
  }
  uploadInput.value = "";
});

async function boot(): Promise<void> {
  try {
    const mappers = await api.listMappers();
    if (mappers.length === 0) {
      toast("the service has no mappers loaded");
      return;
    }
    mapperSelect.textContent = "";
    for (const info of mappers) {
      const option = document.createElement("option");
      option.value = info.mapper_id;
      option.textContent = `${info.mapper_id} (${info.model_id})`;
      mapperSelect.appendChild(option);
    }
    mapperSelect.addEventListener("change", () => {
      const info = mappers.find((m) => m.mapper_id === mapperSelect.value);
      if (info) void selectMapper(info);
    });
    await selectMapper(mappers[0]);
  } catch (error) {
    toast(error instanceof Error ? error.message : String(error));
  }
}

void boot();
