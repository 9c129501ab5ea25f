/**
 * DOM shell for the annotation workbench. All behavior lives in
 * AnnotationSession; this file renders its view and forwards events.
 *
 * Keyboard: Alt+N new row, Ctrl+Enter submit.
 */

import { createApiClient } from './api.js';
import { AnnotationSession } from './session.js';
import type { GainRow, OpKind, SlotDef, StateJson } from './types.js';

const OPS: OpKind[] = ['add', 'remove', 'set', 'clear'];

const api = createApiClient('');
const root = document.getElementById('app') as HTMLDivElement;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function stateTable(state: StateJson, emptyLabel: string): HTMLElement {
  const slots = Object.keys(state).sort();
  if (slots.length === 0) return el('p', 'muted', emptyLabel);
  const table = el('table', 'state-table');
  for (const slot of slots) {
    const row = el('tr');
    row.appendChild(el('th', undefined, slot));
    row.appendChild(el('td', undefined, (state[slot] ?? []).join(', ')));
    table.appendChild(row);
  }
  return table;
}

function valueOptions(slot: SlotDef | undefined): string[] {
  return slot ? slot.schema_values : [];
}

function rowEditor(
  session: AnnotationSession,
  row: GainRow,
  index: number,
  reasons: string[],
): HTMLElement {
  const schema = session.requireSchema();
  const container = el('div', reasons.length ? 'gain-row invalid' : 'gain-row');
  if (row.suggested) container.classList.add('suggested');

  const opSelect = el('select');
  for (const op of OPS) {
    const option = el('option', undefined, op);
    option.value = op;
    if (op === row.op) option.selected = true;
    opSelect.appendChild(option);
  }
  opSelect.addEventListener('change', () => {
    session.updateRow(index, { op: opSelect.value as OpKind });
    render(session);
  });
  container.appendChild(opSelect);

  const slotSelect = el('select');
  const blank = el('option', undefined, '(slot)');
  blank.value = '';
  slotSelect.appendChild(blank);
  for (const slot of schema.slots) {
    const option = el('option', undefined, slot.name);
    option.value = slot.name;
    if (slot.name === row.slot) option.selected = true;
    slotSelect.appendChild(option);
  }
  slotSelect.addEventListener('change', () => {
    session.updateRow(index, { slot: slotSelect.value, values: [] });
    render(session);
  });
  container.appendChild(slotSelect);

  if (row.op !== 'clear') {
    const slotDef = schema.slots.find((s) => s.name === row.slot);
    const options = valueOptions(slotDef);
    const list = el('span', 'values');
    const datalistId = `values-${index}`;
    const input = el('input');
    input.placeholder = 'value (Enter adds)';
    input.setAttribute('list', datalistId);
    const datalist = el('datalist');
    datalist.id = datalistId;
    for (const v of options) {
      const option = el('option');
      option.value = v;
      datalist.appendChild(option);
    }
    input.addEventListener('keydown', (event) => {
      if (event.key === 'Enter' && input.value.trim()) {
        session.updateRow(index, { values: [...row.values, input.value.trim()] });
        render(session);
        event.preventDefault();
        event.stopPropagation();
      }
    });
    for (const [vIndex, value] of row.values.entries()) {
      const chip = el('span', 'chip', value);
      const x = el('button', 'chip-x', 'x');
      x.title = 'remove value';
      x.addEventListener('click', () => {
        const values = row.values.filter((_, i) => i !== vIndex);
        session.updateRow(index, { values });
        render(session);
      });
      chip.appendChild(x);
      list.appendChild(chip);
    }
    list.appendChild(input);
    list.appendChild(datalist);
    container.appendChild(list);
  }

  const remove = el('button', 'row-x', 'delete row');
  remove.addEventListener('click', () => {
    session.removeRow(index);
    render(session);
  });
  container.appendChild(remove);

  for (const reason of reasons) container.appendChild(el('div', 'row-error', reason));
  for (const violation of session.violationsForRow(index)) {
    container.appendChild(el('div', 'row-error server', `server: ${violation.message}`));
  }
  return container;
}

let timerHandle: number | undefined;

function render(session: AnnotationSession): void {
  const view = session.view();
  root.replaceChildren();

  if (view.phase === 'error') {
    root.appendChild(el('div', 'banner error', view.errorBanner ?? 'unrecoverable error'));
    return;
  }
  if (view.phase === 'loading') {
    root.appendChild(el('p', 'muted', 'loading…'));
    return;
  }
  if (view.phase === 'finished') {
    const done = el('div', 'finished');
    done.appendChild(el('h2', undefined, 'Queue empty — session complete'));
    done.appendChild(el('p', undefined, `Tasks completed this session: ${view.completed}`));
    if (view.finalStats) {
      const mine = view.finalStats.overall;
      done.appendChild(
        el(
          'p',
          undefined,
          `Recorded: ${mine.completed} submissions, mean ${mine.mean_seconds.toFixed(1)}s per task`,
        ),
      );
    }
    root.appendChild(done);
    return;
  }

  const task = view.task;
  if (!task) return;

  if (view.defect) root.appendChild(el('div', 'banner error', view.defect));
  if (view.errorBanner) {
    const banner = el('div', 'banner warn', view.errorBanner);
    const retry = el('button', undefined, 'retry');
    retry.addEventListener('click', () => void session.submit().then(() => render(session)));
    banner.appendChild(retry);
    root.appendChild(banner);
  }

  const header = el('header');
  header.appendChild(el('strong', undefined, `task ${task.record.record_id}`));
  header.appendChild(el('span', 'muted', ` done: ${view.completed}`));
  const timer = el('span', 'timer', '0:00');
  header.appendChild(timer);
  root.appendChild(header);
  if (timerHandle !== undefined) window.clearInterval(timerHandle);
  const startedAt = Date.now() - view.elapsedSeconds * 1000;
  timerHandle = window.setInterval(() => {
    const seconds = Math.floor((Date.now() - startedAt) / 1000);
    timer.textContent = `${Math.floor(seconds / 60)}:${String(seconds % 60).padStart(2, '0')}`;
  }, 500);

  const columns = el('div', 'columns');

  const left = el('section', 'pane');
  left.appendChild(el('h3', undefined, 'History preference'));
  left.appendChild(stateTable(task.record.history_preference, 'no prior preferences'));
  left.appendChild(el('h3', undefined, 'Most recent one-turn dialogue'));
  const dialogue = el('div', 'dialogue');
  if (task.record.system_utterance) {
    dialogue.appendChild(el('p', 'sys', `system: ${task.record.system_utterance}`));
  }
  dialogue.appendChild(el('p', 'usr', `user: ${task.record.user_utterance}`));
  left.appendChild(dialogue);
  columns.appendChild(left);

  const right = el('section', 'pane');
  right.appendChild(el('h3', undefined, task.prefilled ? 'State gain (prefilled suggestion)' : 'State gain'));
  view.rows.forEach((row, index) => {
    right.appendChild(rowEditor(session, row, index, view.flags[index]?.reasons ?? []));
  });
  const add = el('button', 'add-row', '+ add row (Alt+N)');
  add.addEventListener('click', () => {
    session.addRow();
    render(session);
  });
  right.appendChild(add);

  right.appendChild(el('h3', undefined, 'Derived preference extraction (preview)'));
  right.appendChild(stateTable(view.preview, 'empty state'));

  const submit = el('button', 'submit', 'Submit (Ctrl+Enter)');
  submit.disabled = !view.canSubmit;
  submit.addEventListener('click', () => void session.submit().then(() => render(session)));
  right.appendChild(submit);
  columns.appendChild(right);

  root.appendChild(columns);
}

function annotatorId(): string {
  const existing = window.localStorage.getItem('annotator_id');
  if (existing) return existing;
  const entered = window.prompt('annotator id:', 'annotator') ?? 'annotator';
  window.localStorage.setItem('annotator_id', entered);
  return entered;
}

async function boot(): Promise<void> {
  const session = new AnnotationSession(api, annotatorId());
  document.addEventListener('keydown', (event) => {
    if (event.altKey && event.key.toLowerCase() === 'n') {
      session.addRow();
      render(session);
      event.preventDefault();
    } else if (event.ctrlKey && event.key === 'Enter') {
      void session.submit().then(() => render(session));
      event.preventDefault();
    }
  });
  render(session);
  await session.start();
  render(session);
}

void boot();
