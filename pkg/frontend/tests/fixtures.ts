import type { Channel, Metrics, Topology } from "../src/api.js";

export function tinyTopology(): Topology {
  return {
    name: "tiny",
    domains: ["X", "Y"],
    nodes: [
      {
        node_id: "alpha",
        domain: "X",
        has_optical_switch: true,
        is_border: true,
        kms_enabled: true,
        modules: [
          { module_id: "tx-1", vendor: "ACME", technology: "CV", role: "emitter" },
        ],
      },
      {
        node_id: "beta",
        domain: "Y",
        has_optical_switch: false,
        is_border: true,
        kms_enabled: true,
        modules: [
          { module_id: "rx-1", vendor: "ACME", technology: "CV", role: "receiver" },
        ],
      },
      {
        node_id: "gamma",
        domain: "Y",
        has_optical_switch: false,
        is_border: false,
        kms_enabled: false,
        modules: [],
      },
    ],
    links: [
      {
        link_id: 1,
        endpoint_a: "alpha",
        endpoint_b: "beta",
        length_km: 5,
        loss_db_c_band: 2.0,
        loss_db_o_band: 3.0,
        inter_domain: true,
      },
      {
        link_id: 2,
        endpoint_a: "beta",
        endpoint_b: "gamma",
        length_km: 3,
        loss_db_c_band: 2.2,
        loss_db_o_band: 3.3,
        inter_domain: false,
      },
    ],
    switches: [
      {
        switch_id: "sw-alpha",
        host_node: "alpha",
        ports: ["l1", "tx"],
        cross_connects: [["tx", "l1"]],
      },
    ],
  };
}

export function channel(overrides: Partial<Channel> = {}): Channel {
  return {
    channel_id: "ch-0001",
    emitter: "tx-1",
    receiver: "rx-1",
    emitter_node: "alpha",
    receiver_node: "beta",
    path: [1],
    band: "C",
    dwdm_channel: "C-37",
    state: "UP",
    effective_loss_db: 2.0,
    skr_kbps: 8.0,
    qber_pct: null,
    ...overrides,
  };
}

export function metrics(overrides: Partial<Metrics> = {}): Metrics {
  return {
    controller: { registrations: 3 },
    buffers: { alpha: { beta: 2048 }, beta: { alpha: 2048, gamma: 512 } },
    audit_records: 0,
    sim_time_s: 12.5,
    epoch: 0,
    ...overrides,
  };
}
