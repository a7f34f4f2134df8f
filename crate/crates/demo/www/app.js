import init, { judgmentMatrix, Session } from "./pkg/c2f_demo.js";

const $ = (id) => document.getElementById(id);

function parseList(text) {
  return new Float64Array(
    text.split(",").map((s) => s.trim()).filter((s) => s.length > 0).map(Number),
  );
}

function showError(el, err) {
  el.innerHTML = "";
  const p = document.createElement("p");
  p.className = "error";
  p.textContent = String(err.message ?? err);
  el.appendChild(p);
}

// Line plot of one or more series over shared x values.
function plot(canvas, xs, series, { yMin, yMax } = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 36;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => Array.from(s.values));
  if (all.length === 0) return;
  const lo = yMin ?? Math.min(...all);
  let hi = yMax ?? Math.max(...all);
  if (hi === lo) hi = lo + 1;
  const x0 = xs[0], x1 = xs[xs.length - 1] === x0 ? x0 + 1 : xs[xs.length - 1];
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - lo) / (hi - lo)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  ctx.fillText(hi.toFixed(3), 2, py(hi) + 4);
  ctx.fillText(lo.toFixed(3), 2, py(lo));
  ctx.fillText(String(x0), px(x0), h - pad + 14);
  ctx.fillText(String(xs[xs.length - 1]), px(x1) - 20, h - pad + 14);

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.fillStyle = s.color;
    ctx.beginPath();
    s.values.forEach((y, i) => {
      const [x, yy] = [px(xs[i]), py(y)];
      if (i === 0) ctx.moveTo(x, yy); else ctx.lineTo(x, yy);
    });
    ctx.stroke();
    if (s.points) {
      s.values.forEach((y, i) => {
        ctx.beginPath();
        ctx.arc(px(xs[i]), py(y), 3, 0, 2 * Math.PI);
        ctx.fill();
      });
    }
  }
}

function renderMatrix() {
  const out = $("jm-out");
  const alpha = Number($("jm-alpha").value);
  $("jm-alpha-value").textContent = alpha.toFixed(2);
  const judgments = parseList($("jm-judgments").value);
  const scores = parseList($("jm-scores").value);
  let values;
  try {
    values = judgmentMatrix(judgments, scores, alpha);
  } catch (err) {
    showError(out, err);
    return;
  }
  const cols = scores.length;
  const max = Math.max(...values);
  const table = document.createElement("table");
  const head = table.insertRow();
  head.appendChild(document.createElement("th"));
  for (let c = 0; c < cols; c++) {
    const th = document.createElement("th");
    th.textContent = c === 0 ? "positive" : `neg ${c}`;
    head.appendChild(th);
  }
  const sumTh = document.createElement("th");
  sumTh.textContent = "row sum";
  head.appendChild(sumTh);
  for (let r = 0; r < judgments.length; r++) {
    const row = table.insertRow();
    const th = document.createElement("th");
    th.textContent = `view ${r + 1} (g=${judgments[r]})`;
    row.appendChild(th);
    let sum = 0;
    for (let c = 0; c < cols; c++) {
      const v = values[r * cols + c];
      sum += v;
      const td = row.insertCell();
      td.textContent = v.toFixed(4);
      td.style.background = `rgba(40, 110, 220, ${(0.75 * v) / max})`;
    }
    row.insertCell().textContent = sum.toFixed(4);
  }
  const total = values.reduce((a, b) => a + b, 0);
  const foot = document.createElement("p");
  foot.className = "muted";
  foot.textContent = `total ${total.toFixed(12)}`;
  out.replaceChildren(table, foot);
}

let session = null;

function resetSession() {
  try {
    session?.free();
    session = new Session($("tr-mode").value, Number($("tr-alpha").value), BigInt($("tr-seed").value || 0));
    $("tr-status").textContent = "iteration 0";
    plot($("tr-canvas"), [0], []);
  } catch (err) {
    session = null;
    showError($("tr-status"), err);
  }
}

function trainSteps() {
  if (!session) resetSession();
  if (!session) return;
  const button = $("tr-step");
  button.disabled = true;
  $("tr-status").textContent = "training…";
  // Yield so the status text paints before the blocking steps run.
  setTimeout(() => {
    try {
      session.step(25);
      const losses = session.losses();
      const xs = Array.from(losses, (_, i) => i + 1);
      plot($("tr-canvas"), xs, [{ values: losses, color: "#2a6edc" }]);
      const acc = session.probeAccuracy();
      $("tr-status").textContent =
        `iteration ${session.iteration()}, loss ${losses[losses.length - 1].toFixed(4)}, probe accuracy ${(100 * acc).toFixed(1)}%`;
    } catch (err) {
      showError($("tr-status"), err);
    } finally {
      button.disabled = false;
    }
  }, 10);
}

function measureSimilarity() {
  if (!session) resetSession();
  if (!session) return;
  const ratios = [0, 0.2, 0.4, 0.6, 0.8, 1.0];
  $("sim-status").textContent = "measuring…";
  setTimeout(() => {
    try {
      const v = session.similarity(new Float64Array(ratios), 5);
      const n = ratios.length;
      plot($("sim-canvas"), ratios, [
        { values: v.slice(0, n), color: "#2a6edc", points: true },
        { values: v.slice(n), color: "#d0342c", points: true },
      ]);
      $("sim-status").textContent = `encoder after ${session.iteration()} iterations; drop ratios ${ratios.join(", ")}`;
    } catch (err) {
      showError($("sim-status"), err);
    }
  }, 10);
}

await init();
for (const id of ["jm-judgments", "jm-scores", "jm-alpha"]) {
  $(id).addEventListener("input", renderMatrix);
}
$("tr-reset").addEventListener("click", resetSession);
$("tr-step").addEventListener("click", trainSteps);
$("sim-run").addEventListener("click", measureSimilarity);
renderMatrix();
resetSession();
