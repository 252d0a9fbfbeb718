/** Workbench bootstrap: worklist panel, layered viewer, correction flow. */

import { ApiClient, ApiError } from "./api.js";
import { ModelBadge } from "./badge.js";
import { GrayscaleImage } from "./image.js";
import { renderOverlay } from "./overlay.js";
import { CorrectionEdit, buildModelUpdatePayload } from "./payload.js";
import { ViewState } from "./state.js";
import { BoxCorners, StudyDocument, WireFinding, findingBox } from "./types.js";
import { displayOrder, entryLabel, isHighlighted } from "./worklist.js";

const SCALE = 6;

interface LoadedStudy {
  doc: StudyDocument;
  image: GrayscaleImage;
  findings: WireFinding[];
}

class Workbench {
  private readonly api: ApiClient;
  private readonly view = new ViewState();
  private badge: ModelBadge;
  private study: LoadedStudy | null = null;

  private readonly worklistEl = el("worklist");
  private readonly bannerEl = el("banner");
  private readonly badgeEl = el("badge");
  private readonly findingsEl = el("findings");
  private readonly messageEl = el("message");
  private readonly imageCanvas = el("image-layer") as HTMLCanvasElement;
  private readonly overlayCanvas = el("overlay-layer") as HTMLCanvasElement;

  constructor() {
    const userPicker = el("user") as HTMLSelectElement;
    this.api = new ApiClient("", userPicker.value);
    this.badge = new ModelBadge("lesion-detector");
    this.badge.onChange((state) => {
      this.badgeEl.textContent = `${state.model} · v${state.version} · ${state.status}`;
      this.badgeEl.dataset.status = state.status;
    });
    userPicker.addEventListener("change", () => {
      this.api.setUser(userPicker.value);
      void this.loadWorklist();
    });
    (el("suppress") as HTMLInputElement).addEventListener("change", (event) => {
      this.view.suppressNormalCases = (event.target as HTMLInputElement).checked;
      this.redraw();
    });
    el("reload").addEventListener("click", () => void this.loadWorklist());
    this.wireCanvas();
  }

  async loadWorklist(): Promise<void> {
    try {
      const envelope = await this.api.worklist();
      this.bannerEl.hidden = true;
      this.worklistEl.replaceChildren();
      for (const entry of displayOrder(envelope.data)) {
        const item = document.createElement("li");
        item.textContent = entryLabel(entry);
        if (isHighlighted(entry, this.api.user())) {
          item.classList.add("mine");
        }
        item.addEventListener("click", () => void this.openStudy(entry.study_id));
        this.worklistEl.appendChild(item);
      }
    } catch (err) {
      // no cached mutation: just offer a retry
      this.bannerEl.hidden = false;
      this.bannerEl.textContent =
        err instanceof ApiError && err.status === 0
          ? "Service unreachable — check the model service and retry."
          : `Worklist failed: ${String(err)}`;
    }
  }

  async openStudy(studyId: string): Promise<void> {
    const doc = (await this.api.study(studyId)).data[0];
    if (doc === undefined) {
      return;
    }
    const image = GrayscaleImage.fromBase64(doc.image, doc.width, doc.height);
    const inference = await this.api.infer(
      doc.image,
      doc.width,
      doc.height,
      doc.model ?? "lesion-detector",
    );
    this.study = { doc, image, findings: inference.data };
    this.view.studyId = studyId;
    this.view.overlayEnabled = {};
    const first = inference.data[0];
    if (first !== undefined) {
      this.badge.update({
        model: first.model,
        version: first.modelVersion,
        status: first.status,
      });
    }
    this.drawImageLayer();
    this.renderFindingList();
    this.redraw();
  }

  private drawImageLayer(): void {
    if (this.study === null) {
      return;
    }
    const { image } = this.study;
    this.imageCanvas.width = image.width * SCALE;
    this.imageCanvas.height = image.height * SCALE;
    this.overlayCanvas.width = image.width * SCALE;
    this.overlayCanvas.height = image.height * SCALE;
    const ctx = this.imageCanvas.getContext("2d");
    if (ctx === null) {
      return;
    }
    const raw = ctx.createImageData(image.width, image.height);
    raw.data.set(image.toRgba());
    void createImageBitmap(raw).then((bitmap) => {
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(bitmap, 0, 0, this.imageCanvas.width, this.imageCanvas.height);
    });
  }

  private renderFindingList(): void {
    if (this.study === null) {
      return;
    }
    this.findingsEl.replaceChildren();
    for (const finding of this.study.findings) {
      const row = document.createElement("li");
      const label = finding.annotationText;
      const box = findingBox(finding);
      const toggle = document.createElement("input");
      toggle.type = "checkbox";
      toggle.checked = this.view.overlayEnabled[label] ?? true;
      toggle.disabled = box === null;
      toggle.addEventListener("change", () => {
        this.view.toggleOverlay(label);
        this.redraw();
      });
      row.appendChild(toggle);
      row.appendChild(
        document.createTextNode(
          ` ${label} — ${(finding.probability * 100).toFixed(1)}%`,
        ),
      );
      if (box !== null) {
        row.appendChild(this.actionButton("disable", () => this.submit({
          disposition: "disabled", label, box,
        })));
        row.appendChild(this.actionButton("adjust", () => {
          this.view.beginMove(label, box);
          this.message(`drag on the image to move the ${label} box, release to submit`);
        }));
        for (const other of this.otherLabels(label)) {
          row.appendChild(this.actionButton(`relabel→${other}`, () => this.submit({
            disposition: "relabeled", label: other, box,
          })));
        }
      } else {
        row.appendChild(this.actionButton("draw box", () => {
          this.view.selectedLabel = label;
          this.message(`drag on the image to draw the missed ${label} box`);
        }));
      }
      this.findingsEl.appendChild(row);
    }
  }

  private otherLabels(label: string): string[] {
    if (this.study === null) {
      return [];
    }
    return this.study.findings
      .map((f) => f.annotationText)
      .filter((other) => other !== label);
  }

  private actionButton(text: string, onClick: () => void): HTMLButtonElement {
    const button = document.createElement("button");
    button.textContent = text;
    button.addEventListener("click", onClick);
    return button;
  }

  private wireCanvas(): void {
    const position = (event: MouseEvent): { x: number; y: number } => {
      const rect = this.overlayCanvas.getBoundingClientRect();
      return {
        x: (event.clientX - rect.left) / SCALE,
        y: (event.clientY - rect.top) / SCALE,
      };
    };
    this.overlayCanvas.addEventListener("mousedown", (event) => {
      if (this.study === null) {
        return;
      }
      const { x, y } = position(event);
      if (this.view.edit === null && this.view.selectedLabel !== null) {
        this.view.beginDraw(this.view.selectedLabel, x, y, this.bounds());
        this.view.selectedLabel = null;
      }
      this.view.dragTo(x, y, this.bounds());
      this.redraw();
    });
    this.overlayCanvas.addEventListener("mousemove", (event) => {
      if (this.view.edit === null) {
        return;
      }
      const { x, y } = position(event);
      this.view.dragTo(x, y, this.bounds());
      this.redraw();
    });
    this.overlayCanvas.addEventListener("mouseup", () => {
      const edit = this.view.completeEdit();
      if (edit === null) {
        return;
      }
      const disposition = edit.corner === "draw" ? "added" : "box-adjusted";
      void this.submit({ disposition, label: edit.label, box: edit.draft });
    });
  }

  private bounds(): { width: number; height: number } {
    const doc = this.study?.doc;
    return { width: doc?.width ?? 64, height: doc?.height ?? 64 };
  }

  private async submit(edit: CorrectionEdit): Promise<void> {
    if (this.study === null) {
      return;
    }
    const { doc } = this.study;
    const payload = buildModelUpdatePayload(edit, {
      studyId: doc.study_id,
      imageBase64: doc.image,
      width: doc.width,
      height: doc.height,
      model: this.badge.current().model,
      modelVersion: this.badge.current().version,
    });
    try {
      const response = await this.api.submitCorrection(payload);
      const row = response.data[0];
      this.badge.update({
        status: response.status,
        ...(row ? { model: row.model, version: row.modelVersion } : {}),
      });
      this.message(`correction accepted (${edit.disposition} ${edit.label})`);
      await this.badge.pollWhileRetraining(() => this.api.listModels());
      if (this.view.studyId !== null) {
        await this.openStudy(this.view.studyId);
      }
    } catch (err) {
      if (err instanceof ApiError) {
        // validation problem: keep the edit around for resubmission
        this.message(`rejected (${err.status}): ${err.message}`);
        return;
      }
      throw err;
    }
  }

  private message(text: string): void {
    this.messageEl.textContent = text;
  }

  private redraw(): void {
    if (this.study === null) {
      return;
    }
    const ctx = this.overlayCanvas.getContext("2d");
    if (ctx === null) {
      return;
    }
    renderOverlay(
      ctx,
      this.study.findings,
      this.view.overlayEnabled,
      {
        suppressNormalCases: this.view.suppressNormalCases,
        detectionThreshold: 0.5,
      },
      {
        width: this.overlayCanvas.width,
        height: this.overlayCanvas.height,
        scale: SCALE,
      },
      this.view.edit?.draft ?? null,
    );
  }
}

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node;
}

const workbench = new Workbench();
void workbench.loadWorklist();
