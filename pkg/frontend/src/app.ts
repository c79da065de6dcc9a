// Console wiring: one poll loop, delegated actions, no state invention.

import { ApiError, ControllerApi, ControllerUnreachable } from "./api.js";
import {
  applyChannels,
  applyMetrics,
  applyTopology,
  cancelSwitch,
  connectionLost,
  emptyModel,
  recordProvisionFailure,
  recordReceipt,
  recordSwitchFailure,
  recordSwitchResult,
  requestSwitch,
  ViewModel,
} from "./model.js";
import {
  renderBanner,
  renderBuffers,
  renderChannels,
  renderConfirmDialog,
  renderEvents,
  renderProvisionPanel,
  renderSwitchPanel,
  renderTopology,
} from "./views.js";

export const POLL_INTERVAL_MS = 2000;

export function parsePairs(text: string): [string, string][] {
  return text
    .split(",")
    .map((part) => part.trim())
    .filter((part) => part.length > 0)
    .map((part) => {
      const bits = part.split(":").map((s) => s.trim());
      if (bits.length !== 2 || !bits[0] || !bits[1]) {
        throw new Error(`cannot parse cross-connect '${part}' (want port:port)`);
      }
      return [bits[0], bits[1]] as [string, string];
    });
}

export class ConsoleApp {
  model: ViewModel = emptyModel();
  private srcSel = "";
  private dstSel = "";
  private pollTimer: number | undefined;
  private inFlightPoll = false;

  constructor(
    private api: ControllerApi,
    private root: HTMLElement,
  ) {}

  start(): void {
    this.root.addEventListener("click", (ev) => this.onAction(ev));
    this.root.addEventListener("change", (ev) => this.onFieldChange(ev));
    void this.poll();
    this.pollTimer = window.setInterval(() => void this.poll(), POLL_INTERVAL_MS);
  }

  stop(): void {
    if (this.pollTimer !== undefined) window.clearInterval(this.pollTimer);
  }

  /** One in-flight poll per tick; topology refreshes with each cycle. */
  async poll(): Promise<void> {
    if (this.inFlightPoll) return;
    this.inFlightPoll = true;
    try {
      applyTopology(this.model, await this.api.topology());
      applyChannels(this.model, await this.api.channels());
      applyMetrics(this.model, await this.api.metrics());
    } catch (err) {
      if (err instanceof ControllerUnreachable) {
        connectionLost(this.model);
      } else {
        throw err;
      }
    } finally {
      this.inFlightPoll = false;
      this.render();
    }
  }

  render(): void {
    const m = this.model;
    if (!this.srcSel && m.topology) {
      const kms = m.topology.nodes.filter((n) => n.kms_enabled);
      this.srcSel = kms[0]?.node_id ?? "";
      this.dstSel = kms[1]?.node_id ?? "";
    }
    const section = (id: string, html: string) => {
      const el = this.root.querySelector(`[data-section="${id}"]`);
      if (el) el.innerHTML = html;
    };
    section("banner", renderBanner(m));
    section("topology", renderTopology(m));
    section("channels", renderChannels(m));
    section("buffers", renderBuffers(m));
    section("switches", renderSwitchPanel(m));
    section("provision", renderProvisionPanel(m, this.srcSel, this.dstSel));
    section("events", renderEvents(m));
    section("dialog", renderConfirmDialog(m));
  }

  private onFieldChange(ev: Event): void {
    const el = ev.target as HTMLElement;
    const field = el.getAttribute("data-field");
    if (field === "src") {
      this.srcSel = (el as HTMLSelectElement).value;
      this.render();
    } else if (field === "dst") {
      this.dstSel = (el as HTMLSelectElement).value;
      this.render();
    }
  }

  private onAction(ev: Event): void {
    const target = (ev.target as HTMLElement).closest("[data-action]");
    if (!target) return;
    const action = target.getAttribute("data-action");
    if (action === "switch-request") {
      const switchId = target.getAttribute("data-switch-id")!;
      const input = this.root.querySelector<HTMLInputElement>(
        `[data-switch="${switchId}"] [data-field="pairs"]`,
      );
      try {
        requestSwitch(this.model, switchId, parsePairs(input?.value ?? ""));
      } catch (err) {
        recordSwitchFailure(this.model, switchId, String(err));
      }
      this.render();
    } else if (action === "switch-cancel") {
      cancelSwitch(this.model);
      this.render();
    } else if (action === "switch-confirm") {
      void this.confirmSwitch();
    } else if (action === "provision-submit") {
      void this.submitProvision();
    }
  }

  async confirmSwitch(): Promise<void> {
    const pending = this.model.pendingSwitch;
    if (!pending) return;
    try {
      const result = await this.api.applySwitch(pending.switchId, pending.crossConnects);
      recordSwitchResult(this.model, result);
    } catch (err) {
      if (err instanceof ApiError) {
        recordSwitchResult(this.model, {
          switch_id: pending.switchId,
          result: "REJECTED",
          reason: err.message, // controller's reason, verbatim
          affected_channels: [],
        });
      } else {
        connectionLost(this.model);
        recordSwitchFailure(this.model, pending.switchId, "controller unreachable");
      }
    }
    this.render();
    void this.poll();
  }

  async submitProvision(): Promise<void> {
    const size = this.root.querySelector<HTMLInputElement>(`[data-field="size"]`);
    const policy = this.root.querySelector<HTMLSelectElement>(`[data-field="policy"]`);
    try {
      const receipt = await this.api.provision(
        this.srcSel,
        this.dstSel,
        Number(size?.value ?? 32),
        (policy?.value as "single" | "independent-sources") ?? "single",
      );
      recordReceipt(this.model, receipt);
    } catch (err) {
      if (err instanceof ApiError) {
        recordProvisionFailure(this.model, err.message);
      } else {
        connectionLost(this.model);
        recordProvisionFailure(this.model, "controller unreachable");
      }
    }
    this.render();
  }
}

export function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("controller") ?? `http://${window.location.hostname}:8080`;
  const root = document.getElementById("console-root");
  if (!root) throw new Error("missing #console-root");
  const app = new ConsoleApp(new ControllerApi(base), root);
  app.start();
}

if (typeof document !== "undefined" && document.getElementById("console-root")) {
  boot();
}
