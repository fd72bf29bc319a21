import copy
import itertools
import logging
import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError

from app.core.exceptions import ConfigSchemaException, SafeDException, TrainingException, describe_validation_error
from app.models.network import ModelConfig
from app.models.telemetry import DatasetManifest, WindowSample
from app.models.training import GridResult, GridRow, TrainConfig, TrainHistory
from app.services.model_service import ModelService
from app.services.safed_network import SafeDNet
from app.utils.helpers import canonical_json, make_rng

logger = logging.getLogger(__name__)


class TrainService:
    """Adam + 계단식 학습률 감소 + 교차 엔트로피 학습 서비스"""

    def __init__(self, model_service: Optional[ModelService] = None):
        self.model_service = model_service or ModelService()

    @staticmethod
    def parse_config(cfg: Union[TrainConfig, Dict[str, Any], None]) -> TrainConfig:
        if isinstance(cfg, TrainConfig):
            return cfg
        try:
            return TrainConfig.model_validate(cfg or {})
        except ValidationError as e:
            raise ConfigSchemaException(f"학습 설정 오류: {describe_validation_error(e)}")

    def split_dataset(
        self,
        manifest: DatasetManifest,
        ratio: float,
        seed: int,
        stratify_by_map: bool = True,
    ) -> Tuple[List[str], List[str]]:
        """트레이스 단위 (라벨, 맵) 층화 분할; 한 트레이스의 윈도우는 같은 쪽에 속한다"""
        if not 0 < ratio < 1:
            raise TrainingException(f"split_ratio는 (0, 1) 범위여야 합니다 (입력 {ratio})")

        strata: "OrderedDict[Tuple[str, str], List[str]]" = OrderedDict()
        for entry in manifest.entries:
            key = (entry.label.value, entry.map_id if stratify_by_map else "*")
            strata.setdefault(key, []).append(entry.trace_id)
        if not strata:
            raise TrainingException("분할할 트레이스가 없습니다")
        for key, ids in strata.items():
            if len(ids) < 2:
                raise TrainingException(f"층 {key[0]}/{key[1]}의 트레이스가 2개 미만입니다 ({len(ids)}개)")

        sizes = [len(ids) for ids in strata.values()]
        quotas = self._allocate(sizes, ratio)

        train_ids, test_ids = set(), set()
        for index, ((key, ids), quota) in enumerate(zip(strata.items(), quotas)):
            order = make_rng(seed, index).permutation(len(ids))
            shuffled = [ids[i] for i in order]
            train_ids.update(shuffled[:quota])
            test_ids.update(shuffled[quota:])

        ordered = [entry.trace_id for entry in manifest.entries]
        train = [tid for tid in ordered if tid in train_ids]
        test = [tid for tid in ordered if tid in test_ids]
        logger.info(f"분할 완료: train {len(train)} / test {len(test)} 트레이스 (ratio={ratio}, seed={seed})")
        return train, test

    @staticmethod
    def _allocate(sizes: List[int], ratio: float) -> List[int]:
        """층별 학습 몫: floor(n·ratio)를 [1, n−1]로 제한한 뒤 소수부가 큰 층부터 전체 목표를 맞춘다"""
        target = int(round(sum(sizes) * ratio))
        quotas = [min(max(int(math.floor(n * ratio)), 1), n - 1) for n in sizes]
        fractions = [n * ratio - math.floor(n * ratio) for n in sizes]

        order = sorted(range(len(sizes)), key=lambda i: (-fractions[i], i))
        remainder = target - sum(quotas)
        while remainder > 0:
            grown = False
            for i in order:
                if remainder > 0 and quotas[i] < sizes[i] - 1:
                    quotas[i] += 1
                    remainder -= 1
                    grown = True
            if not grown:
                break
        for i in reversed(order):
            if remainder >= 0:
                break
            if quotas[i] > 1:
                quotas[i] -= 1
                remainder += 1
        return quotas

    @staticmethod
    def record_split(
        manifest: DatasetManifest,
        train_ids: Sequence[str],
        test_ids: Sequence[str],
        ratio: float,
    ) -> DatasetManifest:
        """분할 결과를 매니페스트에 기록 (트레이스의 윈도우는 트레이스의 쪽을 따른다)"""
        split = {tid: "train" for tid in train_ids}
        split.update({tid: "test" for tid in test_ids})
        return manifest.model_copy(update={"split": split, "split_ratio": ratio})

    @staticmethod
    def stored_split(manifest: DatasetManifest) -> Tuple[List[str], List[str]]:
        ordered = [entry.trace_id for entry in manifest.entries]
        unassigned = [tid for tid in ordered if tid not in manifest.split]
        if unassigned:
            raise TrainingException(f"매니페스트 분할에 없는 트레이스가 있습니다: {unassigned[:5]}")
        train = [tid for tid in ordered if manifest.split[tid] == "train"]
        test = [tid for tid in ordered if manifest.split[tid] == "test"]
        return train, test

    @staticmethod
    def split_windows(
        windows: Sequence[WindowSample],
        train_ids: Sequence[str],
        test_ids: Sequence[str],
    ) -> Tuple[List[WindowSample], List[WindowSample]]:
        train_set, test_set = set(train_ids), set(test_ids)
        overlap = train_set & test_set
        if overlap:
            raise TrainingException(f"학습/테스트 분할에 공통 트레이스가 있습니다: {sorted(overlap)[:5]}")
        return (
            [w for w in windows if w.trace_id in train_set],
            [w for w in windows if w.trace_id in test_set],
        )

    @staticmethod
    def lr_at(epoch: int, cfg: TrainConfig) -> float:
        if not 1 <= epoch <= cfg.epochs:
            raise TrainingException(f"에폭 범위 밖입니다: {epoch} (1..{cfg.epochs})")
        if epoch < cfg.lr_decay_epoch:
            return cfg.lr_init
        return cfg.lr_init * cfg.lr_decay_factor

    def train_model(
        self,
        model_cfg: Union[ModelConfig, Dict[str, Any], None],
        train_cfg: Union[TrainConfig, Dict[str, Any], None],
        train_windows: Sequence[WindowSample],
        test_windows: Optional[Sequence[WindowSample]] = None,
        checkpoint_path: Optional[Union[str, Path]] = None,
    ) -> Tuple[SafeDNet, TrainHistory]:
        """최고 테스트 정확도 에폭의 파라미터를 가진 모델과 전체 기록 반환"""
        model_cfg = self.model_service.parse_config(model_cfg)
        train_cfg = self.parse_config(train_cfg)
        if train_cfg.dropout is not None:
            model_cfg = model_cfg.model_copy(update={"dropout": train_cfg.dropout})

        if not train_windows:
            raise TrainingException("학습 윈도우가 없습니다")
        labels = torch.as_tensor([w.label for w in train_windows], dtype=torch.long)
        if labels.unique().numel() < 2:
            raise TrainingException(f"학습 데이터에 한 클래스만 있습니다 (label={int(labels[0])})")

        seed = train_cfg.resolved_seed
        model = self.model_service.build(model_cfg, seed=seed)
        x = self.model_service.to_tensor(train_windows, model_cfg.window_len)
        test_x = self.model_service.to_tensor(test_windows, model_cfg.window_len) if test_windows else None
        test_y = np.array([w.label for w in test_windows]) if test_windows else None

        optimizer = torch.optim.Adam(
            [p for p in model.parameters() if p.requires_grad],
            lr=train_cfg.lr_init,
            betas=(0.9, 0.999),
            eps=1e-8,
        )
        generator = torch.Generator().manual_seed(seed)
        history = TrainHistory()
        best_state, best_key = None, None

        logger.info(
            f"학습 시작: 윈도우 {len(train_windows)}개, epochs={train_cfg.epochs}, "
            f"batch={train_cfg.batch_size}, params={self.model_service.parameter_count(model)}"
        )
        for epoch in range(1, train_cfg.epochs + 1):
            lr = self.lr_at(epoch, train_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr

            model.train()
            order = torch.randperm(x.shape[0], generator=generator)
            total_loss = 0.0
            for start in range(0, x.shape[0], train_cfg.batch_size):
                batch = order[start:start + train_cfg.batch_size]
                optimizer.zero_grad()
                loss = self.model_service.loss(model(x[batch]), labels[batch])
                if not torch.isfinite(loss):
                    logger.error(f"손실 발산: epoch {epoch}, batch {start // train_cfg.batch_size}, lr={lr}")
                    raise TrainingException(f"손실이 유한하지 않습니다 (epoch {epoch}, lr={lr})")
                loss.backward()
                optimizer.step()
                total_loss += float(loss.item()) * batch.numel()

            train_accuracy = self._accuracy(model, x, labels.numpy(), train_cfg.eval_batch_size)
            test_accuracy = self._accuracy(model, test_x, test_y, train_cfg.eval_batch_size) if test_x is not None else None
            history.train_loss.append(total_loss / x.shape[0])
            history.train_accuracy.append(train_accuracy)
            history.test_accuracy.append(test_accuracy)
            history.learning_rate.append(lr)

            key = test_accuracy if test_accuracy is not None else train_accuracy
            if best_key is None or key > best_key:
                best_key = key
                best_state = copy.deepcopy(model.state_dict())
                history.best_epoch = epoch
                history.best_test_accuracy = test_accuracy

            logger.debug(
                f"epoch {epoch}: loss={history.train_loss[-1]:.4f}, train={train_accuracy:.3f}, "
                f"test={test_accuracy if test_accuracy is None else round(test_accuracy, 3)}, lr={lr:g}"
            )

        model.load_state_dict(best_state)
        model.eval()
        logger.info(f"학습 완료: best epoch {history.best_epoch}, test accuracy {history.best_test_accuracy}")

        if checkpoint_path is not None:
            self.model_service.save_checkpoint(
                model,
                checkpoint_path,
                epoch=history.best_epoch,
                seed=seed,
                extra={"train_config": train_cfg.model_dump(mode="json")},
            )
        return model, history

    def _accuracy(self, model: SafeDNet, x: torch.Tensor, y: np.ndarray, batch_size: int) -> float:
        preds = self.model_service.predict(model, x, batch_size=batch_size)
        return float(np.mean(preds == y))

    def evaluate(self, model: SafeDNet, windows: Sequence[WindowSample], batch_size: int = 256) -> np.ndarray:
        """추론 모드 배치 예측"""
        if not windows:
            return np.zeros(0, dtype=np.int64)
        return self.model_service.predict(model, windows, batch_size=batch_size)

    def grid_search(
        self,
        model_cfg: Union[ModelConfig, Dict[str, Any], None],
        train_cfg: Union[TrainConfig, Dict[str, Any], None],
        train_windows: Sequence[WindowSample],
        test_windows: Sequence[WindowSample],
        grid: Optional[Dict[str, List[Any]]] = None,
        jobs: int = 1,
    ) -> GridResult:
        """단축 예산으로 모든 그리드 지점을 학습하고 검증 정확도로 선택"""
        model_cfg = self.model_service.parse_config(model_cfg)
        train_cfg = self.parse_config(train_cfg)
        grid = grid if grid is not None else train_cfg.grid
        if not grid:
            raise TrainingException("그리드가 비어 있습니다")

        keys = sorted(grid)
        points = [dict(zip(keys, values)) for values in itertools.product(*(grid[key] for key in keys))]
        configs = [self._apply_point(model_cfg, train_cfg, point) for point in points]
        logger.info(f"그리드 탐색 시작: {len(points)}개 지점, 지점당 {train_cfg.grid_epochs} 에폭")

        args = [
            (m.model_dump(mode="json"), t.model_dump(mode="json"), list(train_windows), list(test_windows))
            for m, t in configs
        ]
        try:
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as executor:
                    outcomes = list(executor.map(_train_grid_point, args))
            else:
                outcomes = [_train_grid_point(arg) for arg in args]
        except SafeDException:
            raise
        except Exception as e:
            logger.error(f"그리드 탐색 실패: {e}")
            raise TrainingException(f"그리드 탐색에 실패했습니다: {str(e)}")

        rows = [
            GridRow(params=point, test_accuracy=accuracy, parameter_count=count)
            for point, (accuracy, count) in zip(points, outcomes)
        ]
        best = min(
            range(len(rows)),
            key=lambda i: (-rows[i].test_accuracy, rows[i].parameter_count, canonical_json(rows[i].params)),
        )
        rows[best].best = True
        best_model, best_train = configs[best]
        logger.info(f"그리드 탐색 완료: best={rows[best].params} (accuracy {rows[best].test_accuracy:.4f})")
        return GridResult(
            rows=rows,
            best_params=rows[best].params,
            model_config_best=best_model.model_dump(mode="json"),
            train_config_best=best_train.model_dump(mode="json"),
        )

    @staticmethod
    def _apply_point(model_cfg: ModelConfig, train_cfg: TrainConfig, point: Dict[str, Any]) -> Tuple[ModelConfig, TrainConfig]:
        """ModelConfig 필드는 모델에, TrainConfig 필드는 학습 설정에 적용 (dropout은 양쪽)"""
        model_update = {k: v for k, v in point.items() if k in ModelConfig.model_fields}
        train_update = {k: v for k, v in point.items() if k in TrainConfig.model_fields}
        unknown = [k for k in point if k not in model_update and k not in train_update]
        if unknown:
            raise ConfigSchemaException(f"grid: 알 수 없는 키 {unknown}")
        try:
            new_model = ModelConfig.model_validate({**model_cfg.model_dump(), **model_update})
            new_train = TrainConfig.model_validate({
                **train_cfg.model_dump(),
                **train_update,
                "epochs": train_cfg.grid_epochs,
                "grid": None,
            })
        except ValidationError as e:
            raise ConfigSchemaException(f"grid 지점 {point}: {describe_validation_error(e)}")
        return new_model, new_train


def _train_grid_point(arg: tuple) -> Tuple[float, int]:
    model_cfg, train_cfg, train_windows, test_windows = arg
    service = TrainService()
    model, history = service.train_model(model_cfg, train_cfg, train_windows, test_windows)
    count = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return float(history.best_test_accuracy or 0.0), int(count)
