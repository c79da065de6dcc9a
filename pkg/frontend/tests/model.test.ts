import { describe, expect, it } from "vitest";

import {
  applyChannels,
  applyMetrics,
  applyTopology,
  bufferRows,
  cancelSwitch,
  channelsAtRisk,
  connectionLost,
  emptyModel,
  recordSwitchFailure,
  recordSwitchResult,
  requestSwitch,
  SPARK_POINTS,
} from "../src/model.js";
import { channel, metrics, tinyTopology } from "./fixtures.js";

describe("view model", () => {
  it("derives everything from controller responses", () => {
    const m = emptyModel();
    expect(m.connected).toBe(false);
    applyTopology(m, tinyTopology());
    applyChannels(m, [channel()]);
    applyMetrics(m, metrics());
    expect(m.connected).toBe(true);
    expect(m.topology?.nodes).toHaveLength(3);
    expect(m.channels).toHaveLength(1);
    expect(m.simTime).toBe(12.5);
  });

  it("emits feed entries on channel state transitions", () => {
    const m = emptyModel();
    applyChannels(m, [channel({ state: "SYNCING" })]);
    applyChannels(m, [channel({ state: "UP" })]);
    applyChannels(m, [channel({ state: "DOWN" })]);
    const texts = m.events.map((e) => e.text);
    expect(texts).toContain("ch-0001 SYNCING -> UP");
    expect(texts).toContain("ch-0001 UP -> DOWN");
  });

  it("caps sparkline history and zeroes non-up samples", () => {
    const m = emptyModel();
    for (let i = 0; i < SPARK_POINTS + 10; i++) {
      applyChannels(m, [channel({ skr_kbps: i })]);
    }
    const history = m.sparklines.get("ch-0001")!;
    expect(history).toHaveLength(SPARK_POINTS);
    applyChannels(m, [channel({ state: "DOWN", skr_kbps: 99 })]);
    expect(m.sparklines.get("ch-0001")!.at(-1)).toBe(0);
  });

  it("reports connection loss once per outage", () => {
    const m = emptyModel();
    applyChannels(m, [channel()]);
    connectionLost(m);
    connectionLost(m);
    expect(m.events.filter((e) => e.text.includes("connection lost"))).toHaveLength(1);
    expect(m.connected).toBe(false);
  });

  it("identifies channels at risk from a switch command", () => {
    const m = emptyModel();
    applyTopology(m, tinyTopology());
    applyChannels(m, [
      channel(),
      channel({ channel_id: "ch-0002", emitter_node: "beta", receiver_node: "gamma", path: [2] }),
      channel({ channel_id: "ch-0003", state: "DOWN" }),
    ]);
    const risk = channelsAtRisk(m, "sw-alpha");
    expect(risk.map((c) => c.channel_id)).toEqual(["ch-0001"]); // DOWN and far-link channels excluded
  });

  it("stages, cancels and records switch commands without optimism", () => {
    const m = emptyModel();
    applyTopology(m, tinyTopology());
    applyChannels(m, [channel()]);
    requestSwitch(m, "sw-alpha", [["tx", "l1"]]);
    expect(m.pendingSwitch?.atRisk).toHaveLength(1);
    cancelSwitch(m);
    expect(m.pendingSwitch).toBeNull();

    requestSwitch(m, "sw-alpha", [["tx", "l1"]]);
    recordSwitchFailure(m, "sw-alpha", "controller unreachable");
    expect(m.pendingSwitch).toBeNull();
    expect(m.lastSwitchResult).toBeNull(); // nothing pretends to have applied
    expect(m.lastSwitchError).toContain("unreachable");
    expect(m.events[0].text).toContain("not queued");

    recordSwitchResult(m, {
      switch_id: "sw-alpha",
      result: "APPLIED",
      reason: null,
      affected_channels: ["ch-0001"],
    });
    expect(m.lastSwitchResult?.result).toBe("APPLIED");
    expect(m.events[0].text).toContain("affected: ch-0001");
  });

  it("deduplicates buffer pairs", () => {
    const m = emptyModel();
    applyMetrics(m, metrics());
    const rows = bufferRows(m);
    expect(rows).toEqual([
      { node: "alpha", peer: "beta", bytes: 2048 },
      { node: "beta", peer: "gamma", bytes: 512 },
    ]);
  });
});
