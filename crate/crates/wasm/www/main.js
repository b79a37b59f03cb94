import init, { subdivision, Game } from "./pkg/ebp_wasm.js";

const $ = (id) => document.getElementById(id);
const palette = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];
let game = null;
let current = null;

function show(text) {
  $("out").textContent = text;
}

// Small force layout: clique edges pull, every pair pushes.
function layout(g) {
  const index = new Map(g.vertices.map((v, i) => [v.key, i]));
  const edges = [];
  for (const c of g.cliques) {
    for (let i = 0; i < c.length; i++) {
      for (let j = i + 1; j < c.length; j++) edges.push([index.get(c[i]), index.get(c[j])]);
    }
  }
  const pos = g.vertices.map((_, i) => {
    const a = (2 * Math.PI * i) / g.vertices.length;
    return [Math.cos(a), Math.sin(a)];
  });
  for (let iter = 0; iter < 300; iter++) {
    const force = pos.map(() => [0, 0]);
    for (let i = 0; i < pos.length; i++) {
      for (let j = i + 1; j < pos.length; j++) {
        const dx = pos[i][0] - pos[j][0], dy = pos[i][1] - pos[j][1];
        const d2 = dx * dx + dy * dy + 1e-4;
        const f = 0.002 / d2;
        force[i][0] += f * dx; force[i][1] += f * dy;
        force[j][0] -= f * dx; force[j][1] -= f * dy;
      }
    }
    for (const [i, j] of edges) {
      const dx = pos[j][0] - pos[i][0], dy = pos[j][1] - pos[i][1];
      force[i][0] += 0.05 * dx; force[i][1] += 0.05 * dy;
      force[j][0] -= 0.05 * dx; force[j][1] -= 0.05 * dy;
    }
    for (let i = 0; i < pos.length; i++) {
      pos[i][0] += Math.max(-0.05, Math.min(0.05, force[i][0]));
      pos[i][1] += Math.max(-0.05, Math.min(0.05, force[i][1]));
    }
  }
  return { pos, edges };
}

function draw() {
  if (!current) return;
  const { g, pos, edges } = current;
  const a = Number($("value").value);
  const cv = $("canvas"), ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const xs = pos.map((p) => p[0]), ys = pos.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const sx = (x) => 30 + ((x - x0) / (x1 - x0 || 1)) * (cv.width - 60);
  const sy = (y) => 30 + ((y - y0) / (y1 - y0 || 1)) * (cv.height - 60);
  ctx.strokeStyle = "#bbb";
  for (const [i, j] of edges) {
    ctx.beginPath();
    ctx.moveTo(sx(pos[i][0]), sy(pos[i][1]));
    ctx.lineTo(sx(pos[j][0]), sy(pos[j][1]));
    ctx.stroke();
  }
  g.vertices.forEach((v, i) => {
    const unseen = !g.seen[i].includes(a);
    ctx.globalAlpha = unseen ? 0.25 : 1;
    ctx.beginPath();
    ctx.arc(sx(pos[i][0]), sy(pos[i][1]), 5, 0, 2 * Math.PI);
    ctx.fillStyle = v.output === a ? palette[a % palette.length] : "#fff";
    ctx.strokeStyle = palette[(v.id - 1) % palette.length];
    ctx.fill();
    ctx.stroke();
    ctx.globalAlpha = 1;
  });
}

function render(json) {
  const g = JSON.parse(json);
  current = { g, ...layout(g) };
  draw();
  show(`G_${g.level}: ${g.vertices.length} vertices, ${g.cliques.length} cliques`);
}

function guard(f) {
  return () => {
    try {
      f();
    } catch (e) {
      show(`error: ${e.message ?? e}`);
    }
  };
}

await init();

$("draw").onclick = guard(() => render(subdivision(Number($("n").value), Number($("k").value), Number($("level").value))));
$("new").onclick = guard(() => {
  game = new Game(3, 2);
  show(game.summary());
});
$("step").onclick = guard(() => {
  if (!game) game = new Game(3, 2);
  const resp = JSON.parse(game.step($("config").value, Number($("process").value)));
  $("config").value = resp.configKey;
  show(JSON.stringify(resp, null, 1));
});
$("chain").onclick = guard(() => {
  if (!game) game = new Game(3, 2);
  show(`${game.chain(100)}\n${game.summary()}`);
});
$("show").onclick = guard(() => {
  if (!game) game = new Game(3, 2);
  const level = Math.min(JSON.parse(game.summary()).level, 2);
  render(game.graph(level));
});
$("value").onchange = draw;
