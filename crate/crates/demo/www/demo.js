import init, { analyze, loss_curves, groove_consistency } from "./pkg/quintuple_demo.js";

const $ = (id) => document.getElementById(id);
const esc = (s) => String(s).replace(/[&<>]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;" })[c]);
const fmt = (x) => (x === null || x === undefined ? "n/a" : x.toFixed(4));

function runAnalysis() {
  const out = $("analysis");
  let r;
  try {
    r = JSON.parse(analyze($("notes").value, Number($("qpm").value)));
  } catch (e) {
    out.innerHTML = `<p class="error">${esc(e)}</p>`;
    return;
  }
  const chords = r.chords
    .map((c) => `<tr><td>${c.bar}</td><td>${c.degree}</td><td>${c.root}</td><td>${c.mode}</td><td>${c.extension}</td></tr>`)
    .join("");
  const tokens = r.tokens.map((row) => row.join(",")).join("\n");
  out.innerHTML = `
    <p>Key: <strong>${esc(r.key)}</strong> &nbsp; PCE ${fmt(r.metrics.pce)} bits &nbsp;
       SC ${fmt(r.metrics.sc)} &nbsp; GC ${fmt(r.metrics.gc)}</p>
    <table><tr><th>bar</th><th>degree</th><th>root</th><th>mode</th><th>extension</th></tr>${chords}</table>
    <p>Onsets per bar: ${r.grooves.map((g) => "[" + g.join(" ") + "]").join(" ")}</p>
    <details><summary>${r.tokens.length} token rows</summary><pre>etype,f1,f2,f3,f4,f5\n${tokens}</pre></details>`;
}

function drawCurves() {
  const range = Math.max(0.5, Number($("range").value) || 6);
  const r = JSON.parse(loss_curves(-range, range, 201, $("conv").value));
  const cv = $("curves");
  const ctx = cv.getContext("2d");
  const all = r.loss_d.concat(r.loss_g);
  let lo = Math.min(0, ...all), hi = Math.max(0, ...all);
  if (hi - lo < 1e-9) hi = lo + 1;
  const px = (x) => ((x + range) / (2 * range)) * (cv.width - 40) + 30;
  const py = (y) => cv.height - 20 - ((y - lo) / (hi - lo)) * (cv.height - 30);
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(px(-range), py(0)); ctx.lineTo(px(range), py(0));
  ctx.moveTo(px(0), py(lo)); ctx.lineTo(px(0), py(hi));
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText(hi.toFixed(2), 0, py(hi) + 4);
  ctx.fillText(lo.toFixed(2), 0, py(lo));
  ctx.fillText(`gap ${-range}…${range}`, cv.width - 90, cv.height - 4);
  for (const [ys, color] of [[r.loss_d, "#c00"], [r.loss_g, "#36a"]]) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    r.gap.forEach((x, i) => (i ? ctx.lineTo(px(x), py(ys[i])) : ctx.moveTo(px(x), py(ys[i]))));
    ctx.stroke();
  }
}

const bars = { barA: new Set([0, 12, 24, 36]), barB: new Set([0, 24, 30]) };

function updateGroove() {
  $("gc").textContent = groove_consistency(Uint32Array.from(bars.barA), Uint32Array.from(bars.barB)).toFixed(4);
}

function buildGrid(id) {
  const grid = $(id);
  for (let i = 0; i < 48; i++) {
    const cell = document.createElement("div");
    cell.title = `position ${i}`;
    if (i % 12 === 0) cell.classList.add("beat");
    cell.classList.toggle("on", bars[id].has(i));
    cell.onclick = () => {
      bars[id].has(i) ? bars[id].delete(i) : bars[id].add(i);
      cell.classList.toggle("on", bars[id].has(i));
      updateGroove();
    };
    grid.appendChild(cell);
  }
}

await init();
$("analyze").onclick = runAnalysis;
$("conv").onchange = drawCurves;
$("range").oninput = drawCurves;
buildGrid("barA");
buildGrid("barB");
runAnalysis();
drawCurves();
updateGroove();
