from fastapi import APIRouter, UploadFile, File, HTTPException, BackgroundTasks, Depends
from fastapi.responses import StreamingResponse
from sqlalchemy.ext.asyncio import AsyncSession
from sqlalchemy import select
import io
import logging

from app.models.schemas import (
    AirReport,
    AwgnBoundRequest,
    AwgnBoundResponse,
    ExperimentConfig,
    ExperimentResultResponse,
    TaskResponse,
    TaskStatus,
    dbm_to_watts,
)
from app.models.database import ExperimentTask
from app.services.air_estimator import awgn_capacity_bound
from app.services.database import get_db
from app.services.experiment_pipeline import get_experiment_pipeline, output_dir
from app.utils.config_loader import CONFIG_DIR, ConfigLoader, confine_path
from app.utils.errors import SicError
from app.utils.file_formats import format_air_tsv

logger = logging.getLogger(__name__)
router = APIRouter()

# Configuration
MAX_CONFIG_SIZE_MB = 1


async def _queue_experiment(
    cfg: ExperimentConfig, background_tasks: BackgroundTasks, db: AsyncSession
) -> TaskResponse:
    if cfg.cpan.param_table:
        # tables only from configs/ or the results directory
        table = confine_path(cfg.cpan.param_table, [str(CONFIG_DIR), output_dir()])
        cfg = cfg.model_copy(update={"cpan": cfg.cpan.model_copy(update={"param_table": table})})

    task = ExperimentTask(channel=cfg.channel, config=cfg.to_ini(), status=TaskStatus.QUEUED)

    db.add(task)
    await db.commit()
    await db.refresh(task)

    pipeline = await get_experiment_pipeline()
    background_tasks.add_task(pipeline.run_experiment_task, task.id)

    logger.info(f"Experiment task queued: {task.id} ({cfg.channel}, {len(cfg.powers_dbm)} powers)")
    return TaskResponse(id=task.id, status=TaskStatus.QUEUED)


async def _get_task(task_id: str, db: AsyncSession) -> ExperimentTask:
    result = await db.execute(select(ExperimentTask).where(ExperimentTask.id == task_id))
    task = result.scalar_one_or_none()
    if not task:
        raise HTTPException(status_code=404, detail="Task not found")
    return task


@router.post("/experiments", response_model=TaskResponse)
async def create_experiment(
    config_file: UploadFile = File(..., description="Experiment config (INI or JSON)"),
    background_tasks: BackgroundTasks = BackgroundTasks(),
    db: AsyncSession = Depends(get_db)
):
    """
    Upload an experiment config and start the run in the background

    - **config_file**: INI config with [experiment], [constellation], [fiber], [numerics] and [cpan] sections
    """
    try:
        if not ConfigLoader.validate_file_format(config_file.filename):
            raise HTTPException(status_code=400, detail="Invalid config format. Supported: INI, CFG, JSON")

        content = await config_file.read()
        if not ConfigLoader.validate_file_size(len(content), MAX_CONFIG_SIZE_MB):
            raise HTTPException(status_code=400, detail=f"Config file too large (max {MAX_CONFIG_SIZE_MB}MB)")

        cfg = ConfigLoader.parse(content.decode("utf-8"), config_file.filename)
        return await _queue_experiment(cfg, background_tasks, db)

    except HTTPException:
        raise
    except ValueError as e:
        # ConfigurationError and undecodable uploads
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Experiment creation error: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Failed to create experiment: {str(e)}")


@router.post("/experiments/inline", response_model=TaskResponse)
async def create_experiment_inline(
    cfg: ExperimentConfig,
    background_tasks: BackgroundTasks,
    db: AsyncSession = Depends(get_db)
):
    """Start an experiment from a JSON config body"""
    try:
        return await _queue_experiment(cfg, background_tasks, db)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Experiment creation error: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Failed to create experiment: {str(e)}")


@router.get("/experiments/{task_id}", response_model=ExperimentResultResponse)
async def get_experiment_result(
    task_id: str,
    db: AsyncSession = Depends(get_db)
):
    """
    Get experiment status and AIR reports by task ID

    - **task_id**: The ID of the experiment task
    """
    try:
        task = await _get_task(task_id, db)

        response_data = {
            "id": task.id,
            "status": task.status,
            "created_at": task.created_at,
            "updated_at": task.updated_at
        }

        if task.status == TaskStatus.COMPLETED and task.result is not None:
            response_data["result"] = task.result
            response_data["param_table"] = task.param_table or None
        elif task.status == TaskStatus.FAILED and task.error_message:
            response_data["error"] = task.error_message

        return ExperimentResultResponse(**response_data)

    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Get result error: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Failed to get experiment result: {str(e)}")


@router.get("/experiments")
async def list_experiments(
    include_results: bool = False,
    limit: int = 50,
    offset: int = 0,
    db: AsyncSession = Depends(get_db)
):
    """List experiment tasks with pagination and optional results"""
    try:
        result = await db.execute(
            select(ExperimentTask)
            .offset(offset)
            .limit(limit)
            .order_by(ExperimentTask.created_at.desc())
        )
        tasks = result.scalars().all()

        task_list = []
        for task in tasks:
            task_data = {
                "id": task.id,
                "status": task.status,
                "channel": task.channel,
                "created_at": task.created_at,
                "updated_at": task.updated_at
            }

            if include_results and task.status == TaskStatus.COMPLETED and task.result is not None:
                task_data["result"] = task.result
            elif include_results and task.status == TaskStatus.FAILED and task.error_message:
                task_data["error"] = task.error_message

            task_list.append(task_data)

        return {
            "tasks": task_list,
            "total": len(tasks)
        }

    except Exception as e:
        logger.error(f"List experiments error: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Failed to list experiments: {str(e)}")


@router.get("/experiments/{task_id}/tsv")
async def export_experiment_tsv(
    task_id: str,
    db: AsyncSession = Depends(get_db)
):
    """Export the AIR reports of a completed experiment as TSV"""
    try:
        task = await _get_task(task_id, db)

        if task.status != TaskStatus.COMPLETED:
            raise HTTPException(status_code=400, detail="Experiment is not completed yet")

        reports = [AirReport.model_validate(r) for r in task.result or []]
        buffer = io.BytesIO(format_air_tsv(reports).encode("utf-8"))
        filename = f"air_{task_id[:8]}.tsv"

        return StreamingResponse(
            buffer,
            media_type="text/tab-separated-values",
            headers={"Content-Disposition": f"attachment; filename={filename}"}
        )

    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"TSV export error: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Error exporting TSV: {str(e)}")


@router.delete("/experiments/{task_id}")
async def delete_experiment(
    task_id: str,
    db: AsyncSession = Depends(get_db)
):
    """Delete an experiment task"""
    try:
        task = await _get_task(task_id, db)

        await db.delete(task)
        await db.commit()

        return {"message": f"Task {task_id} deleted successfully"}

    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Delete task error: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Failed to delete task: {str(e)}")


@router.post("/air/awgn-bound", response_model=AwgnBoundResponse)
async def get_awgn_bound(request: AwgnBoundRequest):
    """Capacity log2(1 + P / sigma_ase2) of the AWGN channel at one launch power"""
    try:
        capacity = awgn_capacity_bound(dbm_to_watts(request.power_dbm), request.sigma_ase2)
        return AwgnBoundResponse(
            power_dbm=request.power_dbm, sigma_ase2=request.sigma_ase2, capacity_bpcu=capacity
        )
    except SicError as e:
        raise HTTPException(status_code=400, detail=str(e))
