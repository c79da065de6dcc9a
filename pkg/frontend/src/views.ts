// Pure render functions: ViewModel in, HTML string out. All interactivity
// is declared through data-action attributes that app.ts wires up, so the
// rendering itself stays trivially testable.

import type { Channel } from "./api.js";
import { bufferRows, ViewModel } from "./model.js";

const NODE_POS: Record<string, [number, number]> = {
  quintin: [70, 70],
  quijote: [210, 170],
  almagro: [70, 250],
  quevedo: [360, 90],
  delicias: [80, 400],
  quijano: [230, 330],
  norte: [540, 120],
  concepcion: [680, 60],
  distrito: [680, 230],
};

function esc(text: unknown): string {
  return String(text).replace(/[&<>"']/g, (ch) =>
    ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" }[ch] as string),
  );
}

function positions(model: ViewModel): Record<string, [number, number]> {
  const topo = model.topology;
  if (!topo) return {};
  const out: Record<string, [number, number]> = {};
  topo.nodes.forEach((n, i) => {
    if (NODE_POS[n.node_id]) {
      out[n.node_id] = NODE_POS[n.node_id];
    } else {
      const angle = (2 * Math.PI * i) / topo.nodes.length;
      out[n.node_id] = [380 + 300 * Math.cos(angle), 230 + 180 * Math.sin(angle)];
    }
  });
  return out;
}

export function renderBanner(model: ViewModel): string {
  if (model.connected) return "";
  return `<div class="banner error" data-test="banner">controller unreachable &mdash; displaying last known state</div>`;
}

export function renderTopology(model: ViewModel): string {
  const topo = model.topology;
  if (!topo || topo.nodes.length === 0) {
    return `<div class="empty-state" data-test="empty-topology">no topology loaded</div>`;
  }
  const pos = positions(model);
  const parts: string[] = [
    `<svg viewBox="0 0 760 470" class="topo" data-test="topology-map">`,
  ];
  for (const link of topo.links) {
    const [x1, y1] = pos[link.endpoint_a];
    const [x2, y2] = pos[link.endpoint_b];
    const cls = link.inter_domain ? "link border-link" : "link";
    parts.push(
      `<line class="${cls}" data-link="${link.link_id}" x1="${x1}" y1="${y1}" x2="${x2}" y2="${y2}"/>`,
      `<text class="link-label" x="${(x1 + x2) / 2}" y="${(y1 + y2) / 2 - 6}">L${link.link_id} &middot; ${link.loss_db_c_band.toFixed(1)} dB</text>`,
    );
  }
  // channels drawn as offset strokes along their first/last hop endpoints
  const groups = new Map<string, Channel[]>();
  for (const ch of model.channels) {
    const key = [ch.emitter_node, ch.receiver_node].sort().join("|");
    const list = groups.get(key) ?? [];
    list.push(ch);
    groups.set(key, list);
  }
  for (const [key, channels] of groups) {
    const [a, b] = key.split("|");
    if (!pos[a] || !pos[b]) continue;
    channels.forEach((ch, i) => {
      const [x1, y1] = pos[a];
      const [x2, y2] = pos[b];
      const offset = (i - (channels.length - 1) / 2) * 7;
      const nx = y1 === y2 ? 0 : (y2 - y1) / Math.hypot(x2 - x1, y2 - y1);
      const ny = (x1 - x2) / Math.hypot(x2 - x1, y2 - y1);
      parts.push(
        `<line class="channel state-${ch.state.toLowerCase()}" data-channel="${ch.channel_id}" ` +
          `x1="${x1 + nx * offset}" y1="${y1 + ny * offset}" x2="${x2 + nx * offset}" y2="${y2 + ny * offset}">` +
          `<title>${esc(ch.channel_id)} ${esc(ch.emitter)} &rarr; ${esc(ch.receiver)} [${ch.state}]</title></line>`,
      );
    });
  }
  for (const node of topo.nodes) {
    const [x, y] = pos[node.node_id];
    const classes = ["node"];
    if (node.is_border) classes.push("border-node");
    if (!node.kms_enabled) classes.push("relay-node");
    parts.push(
      `<g class="${classes.join(" ")}" data-node="${esc(node.node_id)}">`,
      `<circle cx="${x}" cy="${y}" r="17"/>`,
      node.has_optical_switch ? `<rect x="${x - 6}" y="${y - 6}" width="12" height="12" class="switch-mark"/>` : "",
      `<text x="${x}" y="${y + 31}">${esc(node.node_id)}</text>`,
      `<text class="domain" x="${x}" y="${y - 23}">${esc(node.domain)}${node.kms_enabled ? "" : " &middot; relay"}</text>`,
      `</g>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}

export function sparklinePath(history: number[], width = 90, height = 22): string {
  if (history.length === 0) return "";
  const max = Math.max(...history, 1e-9);
  const step = history.length > 1 ? width / (history.length - 1) : 0;
  return history
    .map((v, i) => `${i === 0 ? "M" : "L"}${(i * step).toFixed(1)},${(height - (v / max) * height).toFixed(1)}`)
    .join(" ");
}

export function renderChannels(model: ViewModel): string {
  if (model.channels.length === 0) {
    return `<div class="empty-state">no channels yet</div>`;
  }
  const rows = model.channels
    .map((ch) => {
      const spark = sparklinePath(model.sparklines.get(ch.channel_id) ?? []);
      return (
        `<tr class="state-${ch.state.toLowerCase()}" data-channel-row="${ch.channel_id}">` +
        `<td>${esc(ch.channel_id)}</td>` +
        `<td>${esc(ch.emitter)} &rarr; ${esc(ch.receiver)}</td>` +
        `<td>${ch.path.map((l) => `L${l}`).join("+")}</td>` +
        `<td>${esc(ch.dwdm_channel ?? ch.band)}</td>` +
        `<td><span class="chip ${ch.state.toLowerCase()}">${ch.state}</span></td>` +
        `<td class="num">${ch.skr_kbps.toFixed(2)}</td>` +
        `<td class="num">${ch.qber_pct == null ? "&ndash;" : ch.qber_pct.toFixed(2)}</td>` +
        `<td><svg class="spark" viewBox="0 0 90 22"><path d="${spark}"/></svg></td>` +
        `</tr>`
      );
    })
    .join("");
  return (
    `<table class="channels"><thead><tr>` +
    `<th>channel</th><th>pairing</th><th>path</th><th>&lambda;</th><th>state</th>` +
    `<th>skr kbps</th><th>qber %</th><th>trend</th></tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderBuffers(model: ViewModel): string {
  const rows = bufferRows(model);
  if (rows.length === 0) return `<div class="empty-state">no buffer telemetry yet</div>`;
  const peak = Math.max(...rows.map((r) => r.bytes), 1);
  return rows
    .map(
      (r) =>
        `<div class="gauge" data-pair="${esc(r.node)}|${esc(r.peer)}">` +
        `<span class="pair">${esc(r.node)} &harr; ${esc(r.peer)}</span>` +
        `<span class="bar"><span class="fill" style="width:${((100 * r.bytes) / peak).toFixed(1)}%"></span></span>` +
        `<span class="num">${(r.bytes / 1024).toFixed(1)} KiB</span></div>`,
    )
    .join("");
}

export function renderSwitchPanel(model: ViewModel): string {
  const topo = model.topology;
  if (!topo) return "";
  const panels = topo.switches
    .map((sw) => {
      const current = sw.cross_connects.map((c) => `${c[0]}&harr;${c[1]}`).join(", ") || "none";
      return (
        `<div class="switch" data-switch="${esc(sw.switch_id)}">` +
        `<h4>${esc(sw.switch_id)} <small>@ ${esc(sw.host_node)}</small></h4>` +
        `<div>ports: ${sw.ports.map(esc).join(", ")}</div>` +
        `<div>cross-connects: ${current}</div>` +
        `<input type="text" data-field="pairs" placeholder="tx:l3, rx:l4" ` +
        `aria-label="cross-connects for ${esc(sw.switch_id)}"/>` +
        `<button data-action="switch-request" data-switch-id="${esc(sw.switch_id)}">apply&hellip;</button>` +
        `</div>`
      );
    })
    .join("");
  const outcome = model.lastSwitchResult
    ? `<div class="outcome ${model.lastSwitchResult.result.toLowerCase()}" data-test="switch-outcome">` +
      `${model.lastSwitchResult.switch_id}: ${model.lastSwitchResult.result}` +
      (model.lastSwitchResult.reason ? ` &mdash; ${esc(model.lastSwitchResult.reason)}` : "") +
      (model.lastSwitchResult.affected_channels.length
        ? `<br/>affected: ${model.lastSwitchResult.affected_channels.map(esc).join(", ")}`
        : "") +
      `</div>`
    : model.lastSwitchError
      ? `<div class="outcome failed" data-test="switch-outcome">command not queued: ${esc(model.lastSwitchError)}</div>`
      : "";
  return panels + outcome;
}

export function renderConfirmDialog(model: ViewModel): string {
  const pending = model.pendingSwitch;
  if (!pending) return "";
  const risk = pending.atRisk.length
    ? `<p class="warn">this will drop ${pending.atRisk.length} live channel(s):</p>` +
      `<ul>${pending.atRisk
        .map((ch) => `<li>${esc(ch.channel_id)} (${esc(ch.emitter)} &rarr; ${esc(ch.receiver)}, ${ch.state})</li>`)
        .join("")}</ul>`
    : `<p>no live channels ride on this switch right now.</p>`;
  return (
    `<div class="dialog-backdrop" data-test="confirm-dialog">` +
    `<div class="dialog"><h3>reconfigure ${esc(pending.switchId)}?</h3>` +
    `<p>new matching: ${pending.crossConnects.map((c) => `${esc(c[0])}&harr;${esc(c[1])}`).join(", ") || "clear all"}</p>` +
    risk +
    `<button data-action="switch-confirm">confirm</button>` +
    `<button data-action="switch-cancel">cancel</button>` +
    `</div></div>`
  );
}

export function renderProvisionPanel(model: ViewModel, src: string, dst: string): string {
  const topo = model.topology;
  if (!topo) return "";
  const endpoints = topo.nodes.filter((n) => n.kms_enabled).map((n) => n.node_id);
  const options = (selected: string) =>
    endpoints
      .map((n) => `<option value="${esc(n)}"${n === selected ? " selected" : ""}>${esc(n)}</option>`)
      .join("");
  const degenerate = src === dst && src !== "";
  const submit = degenerate
    ? `<button data-action="provision-submit" disabled>provision</button>` +
      `<span class="warn" data-test="degenerate-note">source and destination must differ</span>`
    : `<button data-action="provision-submit">provision</button>`;
  let receipt = "";
  if (model.lastReceipt) {
    const r = model.lastReceipt;
    const borderNodes = new Set(topo.nodes.filter((n) => n.is_border).map((n) => n.node_id));
    const routes = r.routes
      .map(
        (route, i) =>
          `<div class="route" data-test="receipt-route">route ${i + 1}: ` +
          route
            .map((n) => (borderNodes.has(n) ? `<b class="border-node">${esc(n)}</b>` : esc(n)))
            .join(" &rarr; ") +
          `</div>`,
      )
      .join("");
    const components =
      r.jobs.length > 1
        ? `<div data-test="components">components: ${r.jobs
            .map((j) => `${esc(j.vendor ?? "?")} over ${j.route.map(esc).join("&rarr;")}`)
            .join(" &oplus; ")}</div>`
        : "";
    receipt =
      `<div class="receipt ${r.status.toLowerCase()}" data-test="receipt">` +
      `<h4>${esc(r.provision_id)}: ${r.status}</h4>` +
      `<div>${esc(r.src)} &rarr; ${esc(r.dst)}, ${r.size_bytes} B, ${esc(r.policy)}</div>` +
      routes +
      components +
      (r.latency_s != null ? `<div>latency: ${(r.latency_s * 1000).toFixed(2)} ms</div>` : "") +
      (r.failure ? `<div class="warn">${esc(r.failure)}</div>` : "") +
      `</div>`;
  } else if (model.lastProvisionError) {
    receipt = `<div class="receipt failed" data-test="receipt">failed: ${esc(model.lastProvisionError)}</div>`;
  }
  return (
    `<div class="provision-form">` +
    `<label>from <select data-field="src">${options(src)}</select></label>` +
    `<label>to <select data-field="dst">${options(dst)}</select></label>` +
    `<label>bytes <input type="number" data-field="size" value="32" min="1"/></label>` +
    `<label>policy <select data-field="policy">` +
    `<option value="single">single</option>` +
    `<option value="independent-sources">independent sources</option>` +
    `</select></label>` +
    submit +
    `</div>` +
    receipt
  );
}

export function renderEvents(model: ViewModel): string {
  if (model.events.length === 0) return `<div class="empty-state">quiet so far</div>`;
  return (
    `<ul class="events">` +
    model.events
      .map((e) => `<li><span class="t">t=${e.at.toFixed(1)}s</span> ${esc(e.text)}</li>`)
      .join("") +
    `</ul>`
  );
}
