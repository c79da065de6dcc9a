// View model: everything rendered derives from controller responses held
// here. The console invents no network state of its own; the only local
// bookkeeping is poll history (sparklines, event feed) and dialog state.

import type { Channel, Metrics, ProvisionReceipt, SwitchResult, Topology } from "./api.js";

export const SPARK_POINTS = 60;

export interface EventEntry {
  at: number; // sim time of the poll that observed it
  text: string;
}

export interface PendingSwitch {
  switchId: string;
  crossConnects: [string, string][];
  atRisk: Channel[]; // live channels the operator is warned about
}

export interface ViewModel {
  connected: boolean;
  topology: Topology | null;
  channels: Channel[];
  buffers: Metrics["buffers"];
  simTime: number;
  sparklines: Map<string, number[]>;
  events: EventEntry[];
  pendingSwitch: PendingSwitch | null;
  lastSwitchResult: SwitchResult | null;
  lastSwitchError: string | null;
  lastReceipt: ProvisionReceipt | null;
  lastProvisionError: string | null;
}

export function emptyModel(): ViewModel {
  return {
    connected: false,
    topology: null,
    channels: [],
    buffers: {},
    simTime: 0,
    sparklines: new Map(),
    events: [],
    pendingSwitch: null,
    lastSwitchResult: null,
    lastSwitchError: null,
    lastReceipt: null,
    lastProvisionError: null,
  };
}

export function applyTopology(model: ViewModel, topology: Topology): void {
  model.topology = topology;
  model.connected = true;
}

/** Merge a channel poll; derive feed entries from state transitions. */
export function applyChannels(model: ViewModel, channels: Channel[]): void {
  const before = new Map(model.channels.map((c) => [c.channel_id, c.state]));
  for (const ch of channels) {
    const prev = before.get(ch.channel_id);
    if (prev === undefined && model.channels.length > 0) {
      pushEvent(model, `${ch.channel_id} appeared (${ch.state})`);
    } else if (prev !== undefined && prev !== ch.state) {
      pushEvent(model, `${ch.channel_id} ${prev} -> ${ch.state}`);
    }
    const history = model.sparklines.get(ch.channel_id) ?? [];
    history.push(ch.state === "UP" ? ch.skr_kbps : 0);
    if (history.length > SPARK_POINTS) history.shift();
    model.sparklines.set(ch.channel_id, history);
  }
  model.channels = channels;
  model.connected = true;
}

export function applyMetrics(model: ViewModel, metrics: Metrics): void {
  model.buffers = metrics.buffers;
  model.simTime = metrics.sim_time_s;
  model.connected = true;
}

export function connectionLost(model: ViewModel): void {
  if (model.connected) {
    pushEvent(model, "controller connection lost");
  }
  model.connected = false;
}

export function pushEvent(model: ViewModel, text: string): void {
  model.events.unshift({ at: model.simTime, text });
  if (model.events.length > 50) model.events.pop();
}

/** Live channels an operator command on this switch could take down. */
export function channelsAtRisk(model: ViewModel, switchId: string): Channel[] {
  const topo = model.topology;
  if (!topo) return [];
  const sw = topo.switches.find((s) => s.switch_id === switchId);
  if (!sw) return [];
  const hostLinks = new Set(
    topo.links
      .filter((l) => l.endpoint_a === sw.host_node || l.endpoint_b === sw.host_node)
      .map((l) => l.link_id),
  );
  return model.channels.filter(
    (ch) =>
      ch.state !== "DOWN" &&
      (ch.emitter_node === sw.host_node ||
        ch.receiver_node === sw.host_node ||
        ch.path.some((lid) => hostLinks.has(lid))),
  );
}

/** Stage a switch command; the confirmation dialog renders from this. */
export function requestSwitch(
  model: ViewModel,
  switchId: string,
  crossConnects: [string, string][],
): void {
  model.pendingSwitch = {
    switchId,
    crossConnects,
    atRisk: channelsAtRisk(model, switchId),
  };
}

export function cancelSwitch(model: ViewModel): void {
  model.pendingSwitch = null;
}

export function recordSwitchResult(model: ViewModel, result: SwitchResult): void {
  model.lastSwitchResult = result;
  model.lastSwitchError = null;
  model.pendingSwitch = null;
  const affected = result.affected_channels.length
    ? `, affected: ${result.affected_channels.join(", ")}`
    : "";
  pushEvent(
    model,
    `switch ${result.switch_id}: ${result.result}` +
      (result.reason ? ` (${result.reason})` : "") +
      affected,
  );
}

/** Command never reached the controller: no optimistic state, say so. */
export function recordSwitchFailure(model: ViewModel, switchId: string, error: string): void {
  model.lastSwitchResult = null;
  model.lastSwitchError = error;
  model.pendingSwitch = null;
  pushEvent(model, `switch ${switchId}: not queued, ${error}`);
}

export function recordReceipt(model: ViewModel, receipt: ProvisionReceipt): void {
  model.lastReceipt = receipt;
  model.lastProvisionError = null;
  pushEvent(
    model,
    `provision ${receipt.provision_id}: ${receipt.status} ${receipt.src} -> ${receipt.dst}`,
  );
}

export function recordProvisionFailure(model: ViewModel, error: string): void {
  model.lastReceipt = null;
  model.lastProvisionError = error;
  pushEvent(model, `provision failed: ${error}`);
}

/** Per-pair buffer rows, deduplicated to one row per unordered pair. */
export function bufferRows(
  model: ViewModel,
): { node: string; peer: string; bytes: number }[] {
  const rows: { node: string; peer: string; bytes: number }[] = [];
  for (const [node, peers] of Object.entries(model.buffers)) {
    for (const [peer, bytes] of Object.entries(peers)) {
      if (node < peer || !(model.buffers[peer]?.[node] !== undefined)) {
        rows.push({ node, peer, bytes });
      }
    }
  }
  rows.sort((a, b) => (a.node + a.peer).localeCompare(b.node + b.peer));
  return rows;
}
