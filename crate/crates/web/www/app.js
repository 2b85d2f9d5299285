import init, { masked_distributions, preview_partition, Simulator } from "./pkg/fedlmd_web.js";

const $ = (id) => document.getElementById(id);
const nums = (s) => s.split(",").map((x) => x.trim()).filter((x) => x !== "").map(Number);
const err = (e) => { $("err").textContent = e ? String(e) : ""; };

function bars(title, values, masked = []) {
  const max = Math.max(...values, 1e-12);
  const cells = values.map((v, i) =>
    `<div class="bar${masked.includes(i + 1) ? " masked" : ""}" style="height:${(60 * v) / max}px" title="${v.toFixed(4)}"></div>`);
  return `<div class="bars" style="--c:${values.length}"><div>${title}</div>${cells.join("")}</div>`;
}

function ticks(n) {
  const t = Array.from({ length: n }, (_, i) => `<div class="tick">${i + 1}</div>`);
  return `<div class="bars" style="--c:${n}"><div></div>${t.join("")}</div>`;
}

function renderDistributions() {
  try {
    const target = Number($("d-target").value);
    const mask = nums($("d-mask").value);
    const out = JSON.parse(masked_distributions(
      Float64Array.from(nums($("d-teacher").value)), Float64Array.from(nums($("d-student").value)),
      target, Uint32Array.from(mask), Number($("d-tau").value)));
    const hidden = [...mask, target];
    let html = bars("teacher", out.teacher_full) + bars("masked teacher", out.teacher_masked, hidden)
      + bars("masked student", out.student_masked, [target]);
    if (out.fixed_minority) html += bars("fixed minority", out.fixed_minority, mask);
    html += ticks(out.teacher_full.length);
    const tf = out.lmd_tf_kl === null ? "n/a (no minority labels)" : out.lmd_tf_kl.toFixed(5);
    html += `<p>LMD KL ${out.lmd_kl.toFixed(5)} &middot; NTD KL ${out.ntd_kl.toFixed(5)} &middot; LMD-Tf KL ${tf}</p>`;
    $("d-out").innerHTML = html;
    err();
  } catch (e) { err(e); }
}

function countTable(clients) {
  const c = clients[0]?.label_counts.length ?? 0;
  const head = `<tr><th>client</th><th>n</th>${Array.from({ length: c }, (_, i) => `<th>${i + 1}</th>`).join("")}</tr>`;
  const rows = clients.map((k) => {
    const cells = k.label_counts.map((n, i) => `<td class="${k.majority.includes(i + 1) ? "maj" : ""}">${n}</td>`);
    return `<tr><td>${k.client}</td><td>${k.size}</td>${cells.join("")}</tr>`;
  });
  return `<table>${head}${rows.join("")}</table><p>Highlighted cells are majority labels.</p>`;
}

function renderPartition() {
  try {
    const out = JSON.parse(preview_partition($("p-strategy").value, Number($("p-param").value),
      Number($("p-clients").value), Number($("p-classes").value), Number($("p-per").value),
      BigInt($("p-seed").value), $("p-rule").value));
    $("p-out").innerHTML = countTable(out);
    err();
  } catch (e) { err(e); }
}

let sim = null;
let history = [];

function resetSim() {
  try {
    sim?.free();
    sim = new Simulator($("s-loss").value, Number($("s-beta").value), Number($("s-tau").value),
      Number($("s-alpha").value), Number($("s-clients").value), Number($("s-per").value), BigInt($("s-seed").value));
    history = [];
    $("s-out").innerHTML = countTable(JSON.parse(sim.clients()));
    $("s-log").textContent = "";
    err();
  } catch (e) { sim = null; err(e); }
}

function step(n) {
  if (!sim) return;
  try {
    let rec;
    for (let i = 0; i < n; i++) {
      rec = JSON.parse(sim.step());
      history.push(rec);
    }
    const best = Math.max(...history.map((r) => r.accuracy));
    $("s-log").textContent = history.map((r) =>
      `round ${r.round}  acc ${r.accuracy.toFixed(3)}  ${r.loss_kind}  clients ${r.selected.join(",")}`).join("\n")
      + `\nbest ${best.toFixed(3)}`;
    $("s-out").innerHTML = bars("predictions", rec.prediction_counts) + bars("trained on", rec.selected_sample_counts)
      + ticks(rec.prediction_counts.length);
    err();
  } catch (e) { err(e); }
}

await init();
for (const id of ["d-teacher", "d-student", "d-target", "d-mask", "d-tau"]) $(id).addEventListener("input", renderDistributions);
for (const id of ["p-strategy", "p-param", "p-clients", "p-classes", "p-per", "p-seed", "p-rule"]) $(id).addEventListener("input", renderPartition);
$("s-reset").addEventListener("click", resetSim);
$("s-step").addEventListener("click", () => step(1));
$("s-ten").addEventListener("click", () => step(10));
renderDistributions();
renderPartition();
resetSim();
