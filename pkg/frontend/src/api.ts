// Typed client over the controller northbound API. This is the only place
// the console talks to the network from; no other endpoint exists here.

export interface ModuleInfo {
  module_id: string;
  vendor: string;
  technology: "CV" | "DV";
  role: "emitter" | "receiver";
}

export interface TopologyNode {
  node_id: string;
  domain: string;
  has_optical_switch: boolean;
  is_border: boolean;
  kms_enabled: boolean;
  modules: ModuleInfo[];
}

export interface TopologyLink {
  link_id: number;
  endpoint_a: string;
  endpoint_b: string;
  length_km: number;
  loss_db_c_band: number;
  loss_db_o_band: number;
  inter_domain: boolean;
}

export interface TopologySwitch {
  switch_id: string;
  host_node: string;
  ports: string[];
  cross_connects: [string, string][];
}

export interface Topology {
  name: string;
  domains: string[];
  nodes: TopologyNode[];
  links: TopologyLink[];
  switches: TopologySwitch[];
}

export interface Channel {
  channel_id: string;
  emitter: string;
  receiver: string;
  emitter_node: string;
  receiver_node: string;
  path: number[];
  band: "O" | "C";
  dwdm_channel: string | null;
  state: "SYNCING" | "UP" | "DOWN";
  effective_loss_db: number;
  skr_kbps: number;
  qber_pct: number | null;
}

export interface Metrics {
  controller: Record<string, number>;
  buffers: Record<string, Record<string, number>>;
  audit_records: number;
  sim_time_s: number;
  epoch: number;
}

export interface SwitchResult {
  switch_id: string;
  result: "APPLIED" | "REJECTED";
  reason: string | null;
  affected_channels: string[];
}

export interface ProvisionJob {
  job_id: string;
  status: string;
  route: string[];
  vendor: string | null;
  hops: number;
}

export interface ProvisionReceipt {
  provision_id: string;
  status: "DELIVERED" | "FAILED";
  src: string;
  dst: string;
  size_bytes: number;
  policy: string;
  routes: string[][];
  jobs: ProvisionJob[];
  latency_s: number | null;
  failure: string | null;
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

/** Thrown when the controller cannot be reached at all. */
export class ControllerUnreachable extends Error {
  constructor(cause: unknown) {
    super(`controller unreachable: ${String(cause)}`);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ControllerApi {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async call<T>(method: "GET" | "POST", path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, {
        method,
        headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new ControllerUnreachable(err);
    }
    const payload = await resp.json();
    if (!resp.ok) {
      throw new ApiError(resp.status, payload.code ?? "error", payload.error ?? resp.statusText);
    }
    return payload as T;
  }

  topology(): Promise<Topology> {
    return this.call("GET", "/topology");
  }

  async channels(): Promise<Channel[]> {
    const body = await this.call<{ channels: Channel[] }>("GET", "/channels");
    return body.channels;
  }

  metrics(): Promise<Metrics> {
    return this.call("GET", "/metrics");
  }

  applySwitch(switchId: string, crossConnects: [string, string][]): Promise<SwitchResult> {
    return this.call("POST", `/switch/${switchId}/config`, { cross_connects: crossConnects });
  }

  provision(
    src: string,
    dst: string,
    sizeBytes: number,
    policy: "single" | "independent-sources",
  ): Promise<ProvisionReceipt> {
    return this.call("POST", "/keys/provision", {
      src,
      dst,
      size_bytes: sizeBytes,
      policy,
    });
  }
}
