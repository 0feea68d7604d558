// Built by `wasm-bindgen --target web --out-dir www/pkg`; see the README.
import init, { score, parse_markup, clean } from "./pkg/forge_web.js";

const $ = (id) => document.getElementById(id);

function escape(s) {
  return s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function showError(el, msg) {
  el.innerHTML = `<span class="error">${escape(msg)}</span>`;
}

function renderScores() {
  const mode = document.querySelector("input[name=mode]:checked").value;
  const out = JSON.parse(score($("cand").value, $("ref").value, mode));
  if (out.error) return showError($("scores"), out.error);
  const rows = out.scores.map((r) => `<tr><th>${r.metric}</th><td>${r.shown}</td></tr>`).join("");
  $("scores").innerHTML = `<table>${rows}</table>`;
}

function renderMarkup() {
  const out = JSON.parse(parse_markup($("markup").value));
  if (out.error) {
    $("spans").textContent = "";
    return showError($("highlighted"), out.error);
  }
  // Offsets are code points, so index an array of characters rather than the UTF-16 string.
  const chars = Array.from(out.text);
  let html = "";
  let at = 0;
  for (const e of out.entities) {
    html += escape(chars.slice(at, e.start).join(""));
    html += `<mark data-label="${e.label}" title="${e.label}">${escape(e.surface)}</mark>`;
    at = e.end;
  }
  html += escape(chars.slice(at).join(""));
  $("highlighted").innerHTML = html;
  $("spans").textContent = out.entities.map((e) => `${e.label}\t[${e.start}, ${e.end})\t${e.surface}`).join("\n");
}

function renderClean() {
  const out = JSON.parse(clean($("raw").value));
  $("cleaned").textContent = `${JSON.stringify(out.cleaned)}\ntokens: ${out.tokens_before} -> ${out.tokens_after}`;
}

await init();
$("status").textContent = "Ready.";
for (const id of ["cand", "ref"]) $(id).addEventListener("input", renderScores);
for (const r of document.querySelectorAll("input[name=mode]")) r.addEventListener("change", renderScores);
$("markup").addEventListener("input", renderMarkup);
$("raw").addEventListener("input", renderClean);
renderScores();
renderMarkup();
renderClean();
